use std::fmt;

use rand::Rng;

use crate::error::{Error, Result};

/// Dense row-major array of `f64` values.
///
/// The shape always has at least one axis and every axis is non-zero, so
/// `shape.iter().product() == data.len()` with `data` non-empty.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(Error::Dimension(format!(
            "shape {shape:?} must have at least one axis and no zero-length axis"
        )));
    }
    Ok(shape.iter().product())
}

impl Tensor {
    pub fn from_vec(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n = check_shape(&shape)?;
        if n != data.len() {
            return Err(Error::Dimension(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    /// 2-D tensor from nested rows. Panics on ragged input; intended for
    /// literals in code and tests.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Tensor::from_vec(vec![rows.len(), cols], data).expect("non-empty rows")
    }

    pub fn row_vector(values: &[f64]) -> Self {
        Tensor::from_rows(&[values])
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = check_shape(shape).expect("invalid shape");
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// Uniform samples in `[-limit, limit]`.
    pub fn uniform<R: Rng + ?Sized>(shape: &[usize], limit: f64, rng: &mut R) -> Self {
        let n = check_shape(shape).expect("invalid shape");
        let data = (0..n).map(|_| rng.random_range(-limit..=limit)).collect();
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Leading-axis size and the product of the remaining axes. A rank-1
    /// tensor is treated as a single row.
    pub fn rows_cols(&self) -> (usize, usize) {
        match self.shape.as_slice() {
            [n] => (1, *n),
            [r, rest @ ..] => (*r, rest.iter().product()),
            [] => unreachable!("tensors always have rank >= 1"),
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let (_, cols) = self.rows_cols();
        &self.data[i * cols..(i + 1) * cols]
    }

    pub fn scalar(&self) -> Option<f64> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n = check_shape(shape)?;
        if n != self.data.len() {
            return Err(Error::Dimension(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Contract check: every value finite.
    pub fn validate(&self) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(i) => Err(Error::Validity(format!(
                "non-finite value {} at flat index {i} of tensor {:?}",
                self.data[i], self.shape
            ))),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Rounds every value to the nearest `f32`.
    pub fn round_to_f32(&mut self) {
        for v in &mut self.data {
            *v = *v as f32 as f64;
        }
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape, "shape mismatch in comparison");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Splits `[b×T×d]` into `T` tensors of shape `[b×d]`.
    pub fn time_slices(&self) -> Result<Vec<Tensor>> {
        let [b, t, d] = self.shape[..] else {
            return Err(Error::Dimension(format!(
                "expected a [batch×time×dim] tensor, got {:?}",
                self.shape
            )));
        };
        Ok((0..t)
            .map(|step| {
                let mut data = Vec::with_capacity(b * d);
                for i in 0..b {
                    let start = (i * t + step) * d;
                    data.extend_from_slice(&self.data[start..start + d]);
                }
                Tensor {
                    shape: vec![b, d],
                    data,
                }
            })
            .collect())
    }

    /// Inverse of [`Tensor::time_slices`].
    pub fn stack_time(steps: &[Tensor]) -> Result<Tensor> {
        let first = steps
            .first()
            .ok_or_else(|| Error::EmptySequence("no time steps to stack".into()))?;
        let [b, d] = first.shape[..] else {
            return Err(Error::Dimension(format!(
                "time steps must be [batch×dim], got {:?}",
                first.shape
            )));
        };
        if let Some(bad) = steps.iter().find(|s| s.shape != first.shape) {
            return Err(Error::Dimension(format!(
                "time step shape {:?} differs from {:?}",
                bad.shape, first.shape
            )));
        }
        let t = steps.len();
        let mut data = vec![0.0; b * t * d];
        for (step, s) in steps.iter().enumerate() {
            for i in 0..b {
                let dst = (i * t + step) * d;
                data[dst..dst + d].copy_from_slice(&s.data[i * d..(i + 1) * d]);
            }
        }
        Tensor::from_vec(vec![b, t, d], data)
    }
}

fn matrix_dims(t: &Tensor, what: &str) -> Result<(usize, usize)> {
    match t.shape[..] {
        [r, c] => Ok((r, c)),
        _ => Err(Error::Dimension(format!(
            "{what} must be a matrix, got shape {:?}",
            t.shape
        ))),
    }
}

/// `a · b` for `a: [m×k]`, `b: [k×n]`.
///
/// Each output row depends only on the matching row of `a`, with a fixed
/// summation order, so results are independent of the batch they sit in.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = matrix_dims(a, "matmul lhs")?;
    let (k2, n) = matrix_dims(b, "matmul rhs")?;
    if k != k2 {
        return Err(Error::Dimension(format!(
            "matmul inner dimensions disagree: {:?} × {:?}",
            a.shape, b.shape
        )));
    }
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a.data[i * k + p];
            if av == 0.0 {
                continue;
            }
            let b_row = &b.data[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
    Tensor::from_vec(vec![m, n], out)
}

/// `a · bᵀ` for `a: [m×k]`, `b: [n×k]`.
pub(crate) fn matmul_nt(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k) = a.rows_cols();
    let (n, _) = b.rows_cols();
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let a_row = &a.data[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b.data[j * k..(j + 1) * k];
            out[i * n + j] = a_row.iter().zip(b_row).map(|(x, y)| x * y).sum();
        }
    }
    Tensor {
        shape: vec![m, n],
        data: out,
    }
}

/// `aᵀ · b` for `a: [m×k]`, `b: [m×n]`.
pub(crate) fn matmul_tn(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k) = a.rows_cols();
    let (_, n) = b.rows_cols();
    let mut out = vec![0.0; k * n];
    for i in 0..m {
        let b_row = &b.data[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a.data[i * k + p];
            if av == 0.0 {
                continue;
            }
            let out_row = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
    Tensor {
        shape: vec![k, n],
        data: out,
    }
}

/// How the right operand of a binary elementwise op lines up with the left.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Broadcast {
    Same,
    /// Right operand is one row repeated over the leading batch axis.
    Rows,
}

pub(crate) fn broadcast_kind(a: &Tensor, b: &Tensor) -> Result<Broadcast> {
    if a.shape == b.shape {
        return Ok(Broadcast::Same);
    }
    let (_, a_cols) = a.rows_cols();
    let b_is_row = match b.shape[..] {
        [n] => n == a_cols,
        [1, n] => n == a_cols,
        _ => false,
    };
    if b_is_row && a.rank() >= 2 {
        Ok(Broadcast::Rows)
    } else {
        Err(Error::Dimension(format!(
            "cannot broadcast {:?} against {:?}",
            b.shape, a.shape
        )))
    }
}

fn zip_broadcast(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    let data = match broadcast_kind(a, b)? {
        Broadcast::Same => a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect(),
        Broadcast::Rows => {
            let cols = b.data.len();
            a.data
                .iter()
                .enumerate()
                .map(|(i, &x)| f(x, b.data[i % cols]))
                .collect()
        }
    };
    Ok(Tensor {
        shape: a.shape.clone(),
        data,
    })
}

/// Elementwise sum; `b` may be a single row broadcast over `a`'s batch axis.
pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    zip_broadcast(a, b, |x, y| x + y)
}

/// Elementwise product with the same broadcasting rule as [`add`].
pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    zip_broadcast(a, b, |x, y| x * y)
}

pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    x.map(sigmoid_scalar)
}

pub fn tanh(x: &Tensor) -> Tensor {
    x.map(f64::tanh)
}

/// Row-wise softmax with max subtraction.
pub fn softmax(logits: &Tensor) -> Tensor {
    let (rows, cols) = logits.rows_cols();
    let mut data = Vec::with_capacity(logits.len());
    for r in 0..rows {
        let row = &logits.data[r * cols..(r + 1) * cols];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|&v| (v - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        data.extend(exps.into_iter().map(|e| e / sum));
    }
    Tensor {
        shape: logits.shape.clone(),
        data,
    }
}

/// Smallest probability fed to `ln` in the cross-entropy.
pub const PROB_FLOOR: f64 = 1e-12;

fn check_targets(probs: &Tensor, targets: &[usize], mask: &[f64]) -> Result<(usize, usize, f64)> {
    let (rows, cols) = probs.rows_cols();
    if targets.len() != rows || mask.len() != rows {
        return Err(Error::Dimension(format!(
            "cross-entropy over {rows} rows got {} targets and {} mask entries",
            targets.len(),
            mask.len()
        )));
    }
    if let Some((row, &t)) = targets.iter().enumerate().find(|(_, &t)| t >= cols) {
        return Err(Error::Index {
            id: t,
            bound: cols,
            position: format!("target row {row}"),
        });
    }
    let denom: f64 = mask.iter().sum();
    if denom <= 0.0 {
        return Err(Error::DegenerateBatch);
    }
    Ok((rows, cols, denom))
}

/// Masked mean of `-ln p[row, target]`, with `p` floored at [`PROB_FLOOR`].
pub fn cross_entropy(probs: &Tensor, targets: &[usize], mask: &[f64]) -> Result<f64> {
    let (rows, cols, denom) = check_targets(probs, targets, mask)?;
    let total: f64 = (0..rows)
        .filter(|&r| mask[r] != 0.0)
        .map(|r| -mask[r] * probs.data[r * cols + targets[r]].max(PROB_FLOOR).ln())
        .sum();
    Ok(total / denom)
}

pub(crate) fn cross_entropy_checked(probs: &Tensor, targets: &[usize], mask: &[f64]) -> Result<(f64, f64)> {
    let (_, _, denom) = check_targets(probs, targets, mask)?;
    Ok((cross_entropy(probs, targets, mask)?, denom))
}

/// Column-wise concatenation of two matrices with equal row counts.
pub fn concat(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (ra, ca) = matrix_dims(a, "concat lhs")?;
    let (rb, cb) = matrix_dims(b, "concat rhs")?;
    if ra != rb {
        return Err(Error::Dimension(format!(
            "concat batch mismatch: {:?} vs {:?}",
            a.shape, b.shape
        )));
    }
    let mut data = Vec::with_capacity(ra * (ca + cb));
    for r in 0..ra {
        data.extend_from_slice(&a.data[r * ca..(r + 1) * ca]);
        data.extend_from_slice(&b.data[r * cb..(r + 1) * cb]);
    }
    Tensor::from_vec(vec![ra, ca + cb], data)
}

/// Splits the columns of `grad` at `p`, the inverse of [`concat`].
pub fn split_columns(grad: &Tensor, p: usize) -> Result<(Tensor, Tensor)> {
    let (rows, cols) = matrix_dims(grad, "split input")?;
    if p == 0 || p >= cols {
        return Err(Error::Dimension(format!(
            "split point {p} outside (0, {cols})"
        )));
    }
    let mut left = Vec::with_capacity(rows * p);
    let mut right = Vec::with_capacity(rows * (cols - p));
    for r in 0..rows {
        let row = &grad.data[r * cols..(r + 1) * cols];
        left.extend_from_slice(&row[..p]);
        right.extend_from_slice(&row[p..]);
    }
    Ok((
        Tensor::from_vec(vec![rows, p], left)?,
        Tensor::from_vec(vec![rows, cols - p], right)?,
    ))
}

pub(crate) fn check_dropout_rate(rate: f64) -> Result<()> {
    if (0.0..1.0).contains(&rate) {
        Ok(())
    } else {
        Err(Error::Config(format!("dropout rate {rate} must lie in [0, 1)")))
    }
}

/// Inverted-dropout keep mask: `0` for dropped elements, `1/(1-rate)` for
/// survivors.
pub(crate) fn dropout_mask<R: Rng + ?Sized>(n: usize, rate: f64, rng: &mut R) -> Vec<f64> {
    let scale = 1.0 / (1.0 - rate);
    (0..n)
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { scale })
        .collect()
}

/// Inverted dropout. In inference mode, or at rate 0, returns `x` unchanged.
pub fn dropout<R: Rng + ?Sized>(x: &Tensor, rate: f64, rng: &mut R, training: bool) -> Result<Tensor> {
    check_dropout_rate(rate)?;
    if !training || rate == 0.0 {
        return Ok(x.clone());
    }
    let mask = dropout_mask(x.len(), rate, rng);
    Ok(Tensor {
        shape: x.shape.clone(),
        data: x.data.iter().zip(&mask).map(|(v, m)| v * m).collect(),
    })
}
