//! GRU cells, sequence runners and the token embedding layer.
//!
//! Gate convention:
//!
//! ```text
//! z  = σ(x·Wz + h·Uz + bz)
//! r  = σ(x·Wr + h·Ur + br)
//! h̃  = tanh(x·Wh + (r ⊙ h)·Uh + bh)
//! h' = z ⊙ h + (1 − z) ⊙ h̃
//! ```
//!
//! Everything here has two entry points: graph-level functions taking
//! [`Var`] handles (used by the model so gradients flow), and plain
//! tensor-level wrappers that evaluate on a throwaway graph.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{Graph, ParamStore, Tensor, Var};

/// Parameter suffixes of one GRU cell, in storage order.
pub const GRU_PARAM_NAMES: [&str; 9] = ["wz", "wr", "wh", "uz", "ur", "uh", "bz", "br", "bh"];

#[derive(Clone, Debug, PartialEq)]
pub struct GruCellParams {
    pub wz: Tensor,
    pub wr: Tensor,
    pub wh: Tensor,
    pub uz: Tensor,
    pub ur: Tensor,
    pub uh: Tensor,
    pub bz: Tensor,
    pub br: Tensor,
    pub bh: Tensor,
}

/// Glorot/Xavier uniform limit `sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_limit(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

impl GruCellParams {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        let w = Tensor::zeros(&[input_dim, hidden_dim]);
        let u = Tensor::zeros(&[hidden_dim, hidden_dim]);
        let b = Tensor::zeros(&[hidden_dim]);
        GruCellParams {
            wz: w.clone(),
            wr: w.clone(),
            wh: w,
            uz: u.clone(),
            ur: u.clone(),
            uh: u,
            bz: b.clone(),
            br: b.clone(),
            bh: b,
        }
    }

    /// Glorot-uniform matrices, zero biases.
    pub fn glorot<R: Rng + ?Sized>(input_dim: usize, hidden_dim: usize, rng: &mut R) -> Self {
        let wl = glorot_limit(input_dim, hidden_dim);
        let ul = glorot_limit(hidden_dim, hidden_dim);
        let b = Tensor::zeros(&[hidden_dim]);
        GruCellParams {
            wz: Tensor::uniform(&[input_dim, hidden_dim], wl, rng),
            wr: Tensor::uniform(&[input_dim, hidden_dim], wl, rng),
            wh: Tensor::uniform(&[input_dim, hidden_dim], wl, rng),
            uz: Tensor::uniform(&[hidden_dim, hidden_dim], ul, rng),
            ur: Tensor::uniform(&[hidden_dim, hidden_dim], ul, rng),
            uh: Tensor::uniform(&[hidden_dim, hidden_dim], ul, rng),
            bz: b.clone(),
            br: b.clone(),
            bh: b,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.wz.shape()[0]
    }

    pub fn hidden_dim(&self) -> usize {
        self.wz.shape().get(1).copied().unwrap_or(0)
    }

    fn parts(&self) -> [&Tensor; 9] {
        [
            &self.wz, &self.wr, &self.wh, &self.uz, &self.ur, &self.uh, &self.bz, &self.br,
            &self.bh,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let (i, h) = match self.wz.shape() {
            [i, h] => (*i, *h),
            s => return Err(Error::Config(format!("Wz must be a matrix, got {s:?}"))),
        };
        let expect: [&[usize]; 9] = [
            &[i, h],
            &[i, h],
            &[i, h],
            &[h, h],
            &[h, h],
            &[h, h],
            &[h],
            &[h],
            &[h],
        ];
        for ((name, t), want) in GRU_PARAM_NAMES.iter().zip(self.parts()).zip(expect) {
            if t.shape() != want {
                return Err(Error::Config(format!(
                    "GRU parameter {name} has shape {:?}, expected {want:?}",
                    t.shape()
                )));
            }
        }
        Ok(())
    }

    pub fn insert_into(&self, store: &mut ParamStore, prefix: &str) -> Result<()> {
        self.validate()?;
        for (name, t) in GRU_PARAM_NAMES.iter().zip(self.parts()) {
            store.insert(format!("{prefix}.{name}"), t.clone())?;
        }
        Ok(())
    }

    pub fn from_store(store: &ParamStore, prefix: &str) -> Result<Self> {
        let get = |n: &str| {
            store
                .get(&format!("{prefix}.{n}"))
                .cloned()
                .ok_or_else(|| Error::Config(format!("missing parameter {prefix}.{n}")))
        };
        let p = GruCellParams {
            wz: get("wz")?,
            wr: get("wr")?,
            wh: get("wh")?,
            uz: get("uz")?,
            ur: get("ur")?,
            uh: get("uh")?,
            bz: get("bz")?,
            br: get("br")?,
            bh: get("bh")?,
        };
        p.validate()?;
        Ok(p)
    }

    fn to_store(&self) -> Result<ParamStore> {
        let mut store = ParamStore::new();
        self.insert_into(&mut store, "cell")?;
        Ok(store)
    }
}

/// A GRU cell's parameters recorded on a graph.
#[derive(Clone, Copy, Debug)]
pub struct GruVars {
    wz: Var,
    wr: Var,
    wh: Var,
    uz: Var,
    ur: Var,
    uh: Var,
    bz: Var,
    br: Var,
    bh: Var,
    input_dim: usize,
    hidden_dim: usize,
}

impl GruVars {
    pub fn bind(g: &mut Graph, store: &ParamStore, prefix: &str) -> Result<Self> {
        let mut vars = [None; 9];
        for (slot, name) in vars.iter_mut().zip(GRU_PARAM_NAMES) {
            *slot = Some(g.param(store, &format!("{prefix}.{name}"))?);
        }
        let [wz, wr, wh, uz, ur, uh, bz, br, bh] = vars.map(|v| v.expect("bound above"));
        let (input_dim, hidden_dim) = g.value(wz).rows_cols();
        Ok(GruVars {
            wz,
            wr,
            wh,
            uz,
            ur,
            uh,
            bz,
            br,
            bh,
            input_dim,
            hidden_dim,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }
}

fn affine(g: &mut Graph, x: Var, w: Var, h: Var, u: Var, b: Var) -> Result<Var> {
    let xw = g.matmul(x, w)?;
    let hu = g.matmul(h, u)?;
    let s = g.add(xw, hu)?;
    g.add(s, b)
}

/// One GRU step on a graph.
pub fn gru_step_on(g: &mut Graph, cell: &GruVars, x: Var, h_prev: Var) -> Result<Var> {
    let (xb, xd) = g.value(x).rows_cols();
    let (hb, hd) = g.value(h_prev).rows_cols();
    if xd != cell.input_dim || hd != cell.hidden_dim || xb != hb {
        return Err(Error::Dimension(format!(
            "GRU step expects x [b×{}] and h [b×{}], got {:?} and {:?}",
            cell.input_dim,
            cell.hidden_dim,
            g.value(x).shape(),
            g.value(h_prev).shape()
        )));
    }
    let z_pre = affine(g, x, cell.wz, h_prev, cell.uz, cell.bz)?;
    let z = g.sigmoid(z_pre);
    let r_pre = affine(g, x, cell.wr, h_prev, cell.ur, cell.br)?;
    let r = g.sigmoid(r_pre);
    let rh = g.mul(r, h_prev)?;
    let cand_pre = affine(g, x, cell.wh, rh, cell.uh, cell.bh)?;
    let cand = g.tanh(cand_pre);
    let keep = g.mul(z, h_prev)?;
    let one_minus_z = g.one_minus(z);
    let update = g.mul(one_minus_z, cand)?;
    g.add(keep, update)
}

/// Runs a cell left to right; returns the hidden state after every input.
pub fn gru_run_on(g: &mut Graph, cell: &GruVars, inputs: &[Var], h0: Var) -> Result<Vec<Var>> {
    if inputs.is_empty() {
        return Err(Error::EmptySequence("GRU run over zero time steps".into()));
    }
    let mut h = h0;
    let mut outputs = Vec::with_capacity(inputs.len());
    for &x in inputs {
        h = gru_step_on(g, cell, x, h)?;
        outputs.push(h);
    }
    Ok(outputs)
}

/// Top-layer outputs and the final state of every layer.
pub struct StackedRun {
    pub outputs: Vec<Var>,
    pub finals: Vec<Var>,
}

/// Layer 0 consumes `inputs`; layer `i` consumes layer `i-1`'s outputs.
pub fn stacked_gru_run_on(g: &mut Graph, layers: &[GruVars], inputs: &[Var], h0: &[Var]) -> Result<StackedRun> {
    check_chain(layers.iter().map(|l| (l.input_dim, l.hidden_dim)), h0.len())?;
    let mut seq = inputs.to_vec();
    let mut finals = Vec::with_capacity(layers.len());
    for (layer, &h) in layers.iter().zip(h0) {
        seq = gru_run_on(g, layer, &seq, h)?;
        finals.push(*seq.last().expect("non-empty run"));
    }
    Ok(StackedRun {
        outputs: seq,
        finals,
    })
}

fn check_chain(dims: impl Iterator<Item = (usize, usize)>, n_h0: usize) -> Result<()> {
    let dims: Vec<_> = dims.collect();
    if dims.is_empty() {
        return Err(Error::Config("stacked GRU needs at least one layer".into()));
    }
    if n_h0 != dims.len() {
        return Err(Error::Config(format!(
            "{} layers but {n_h0} initial states",
            dims.len()
        )));
    }
    for (i, pair) in dims.windows(2).enumerate() {
        if pair[1].0 != pair[0].1 {
            return Err(Error::Config(format!(
                "layer {} expects input dim {} but layer {i} emits {}",
                i + 1,
                pair[1].0,
                pair[0].1
            )));
        }
    }
    Ok(())
}

/// Tensor-level [`gru_step_on`].
pub fn gru_step(params: &GruCellParams, x: &Tensor, h_prev: &Tensor) -> Result<Tensor> {
    let store = params.to_store()?;
    let mut g = Graph::new();
    let cell = GruVars::bind(&mut g, &store, "cell")?;
    let xv = g.constant(x.clone());
    let hv = g.constant(h_prev.clone());
    let out = gru_step_on(&mut g, &cell, xv, hv)?;
    Ok(g.value(out).clone())
}

/// Tensor-level [`gru_run_on`] over `inputs: [b×T×input_dim]`; returns
/// `([b×T×hidden], h_final)`.
pub fn gru_run(params: &GruCellParams, inputs: &Tensor, h0: &Tensor) -> Result<(Tensor, Tensor)> {
    let (outputs, mut finals) = stacked_gru_run(std::slice::from_ref(params), inputs, std::slice::from_ref(h0))?;
    Ok((outputs, finals.remove(0)))
}

/// Tensor-level [`stacked_gru_run_on`].
pub fn stacked_gru_run(layers: &[GruCellParams], inputs: &Tensor, h0: &[Tensor]) -> Result<(Tensor, Vec<Tensor>)> {
    for l in layers {
        l.validate()?;
    }
    check_chain(layers.iter().map(|l| (l.input_dim(), l.hidden_dim())), h0.len())?;
    let mut store = ParamStore::new();
    for (i, l) in layers.iter().enumerate() {
        l.insert_into(&mut store, &format!("layer{i}"))?;
    }
    let steps = if inputs.rank() == 3 && inputs.shape()[1] == 0 {
        Vec::new()
    } else {
        inputs.time_slices()?
    };
    let mut g = Graph::new();
    let vars = (0..layers.len())
        .map(|i| GruVars::bind(&mut g, &store, &format!("layer{i}")))
        .collect::<Result<Vec<_>>>()?;
    let xs: Vec<Var> = steps.into_iter().map(|t| g.constant(t)).collect();
    let hs: Vec<Var> = h0.iter().map(|t| g.constant(t.clone())).collect();
    let run = stacked_gru_run_on(&mut g, &vars, &xs, &hs)?;
    let outs: Vec<Tensor> = run.outputs.iter().map(|&v| g.value(v).clone()).collect();
    let finals = run.finals.iter().map(|&v| g.value(v).clone()).collect();
    Ok((Tensor::stack_time(&outs)?, finals))
}

/// Token embedding matrix, one row per vocabulary entry.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    pub matrix: Tensor,
    pub trainable: bool,
}

impl EmbeddingTable {
    pub fn new(matrix: Tensor, trainable: bool) -> Result<Self> {
        if matrix.rank() != 2 {
            return Err(Error::Config(format!(
                "embedding matrix must be [vocab×dim], got {:?}",
                matrix.shape()
            )));
        }
        Ok(EmbeddingTable { matrix, trainable })
    }

    pub fn glorot<R: Rng + ?Sized>(vocab_size: usize, embed_dim: usize, rng: &mut R) -> Self {
        let limit = glorot_limit(vocab_size, embed_dim);
        EmbeddingTable {
            matrix: Tensor::uniform(&[vocab_size, embed_dim], limit, rng),
            trainable: true,
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.matrix.shape()[0]
    }

    pub fn embed_dim(&self) -> usize {
        self.matrix.shape()[1]
    }
}

/// Checks every id in a `[b×T]` block against the vocabulary size.
pub fn check_ids(ids: &[Vec<usize>], vocab_size: usize) -> Result<()> {
    for (row, seq) in ids.iter().enumerate() {
        if let Some((slot, &id)) = seq.iter().enumerate().find(|(_, &id)| id >= vocab_size) {
            return Err(Error::Index {
                id,
                bound: vocab_size,
                position: format!("row {row}, slot {slot}"),
            });
        }
    }
    Ok(())
}

/// Embeds column `t` of a `[b×T]` id block: one `[b×embed_dim]` node.
pub fn embed_column(g: &mut Graph, table: Var, ids: &[Vec<usize>], t: usize) -> Result<Var> {
    let column: Vec<usize> = ids.iter().map(|row| row[t]).collect();
    g.gather(table, &column)
}

/// Row lookup of `ids: [b×T]` into `[b×T×embed_dim]`.
pub fn embed(table: &EmbeddingTable, ids: &[Vec<usize>]) -> Result<Tensor> {
    let t = ids.first().map_or(0, Vec::len);
    if ids.is_empty() || t == 0 {
        return Err(Error::EmptySequence("no token ids to embed".into()));
    }
    if ids.iter().any(|r| r.len() != t) {
        return Err(Error::Dimension("ragged id block".into()));
    }
    check_ids(ids, table.vocab_size())?;
    let d = table.embed_dim();
    let mut data = Vec::with_capacity(ids.len() * t * d);
    for row in ids {
        for &id in row {
            data.extend_from_slice(table.matrix.row(id));
        }
    }
    Tensor::from_vec(vec![ids.len(), t, d], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::tensor::sigmoid_scalar;
    use crate::numerics::{gradcheck, seeded, Coverage};
    use proptest::prelude::*;

    fn random_cell(input: usize, hidden: usize, seed: u64) -> GruCellParams {
        let mut rng = seeded(seed);
        let mut p = GruCellParams::glorot(input, hidden, &mut rng);
        p.bz = Tensor::uniform(&[hidden], 0.5, &mut rng);
        p.br = Tensor::uniform(&[hidden], 0.5, &mut rng);
        p.bh = Tensor::uniform(&[hidden], 0.5, &mut rng);
        p
    }

    /// Scalar-by-scalar evaluation of one GRU step for one batch row.
    fn scalar_gru(p: &GruCellParams, x: &[f64], h: &[f64]) -> Vec<f64> {
        let (i_dim, h_dim) = (p.input_dim(), p.hidden_dim());
        let at = |t: &Tensor, r: usize, c: usize| t.data()[r * h_dim + c];
        let mut z = vec![0.0; h_dim];
        let mut r = vec![0.0; h_dim];
        for j in 0..h_dim {
            let mut sz = p.bz.data()[j];
            let mut sr = p.br.data()[j];
            for k in 0..i_dim {
                sz += x[k] * at(&p.wz, k, j);
                sr += x[k] * at(&p.wr, k, j);
            }
            for k in 0..h_dim {
                sz += h[k] * at(&p.uz, k, j);
                sr += h[k] * at(&p.ur, k, j);
            }
            z[j] = sigmoid_scalar(sz);
            r[j] = sigmoid_scalar(sr);
        }
        (0..h_dim)
            .map(|j| {
                let mut s = p.bh.data()[j];
                for k in 0..i_dim {
                    s += x[k] * at(&p.wh, k, j);
                }
                for k in 0..h_dim {
                    s += r[k] * h[k] * at(&p.uh, k, j);
                }
                z[j] * h[j] + (1.0 - z[j]) * s.tanh()
            })
            .collect()
    }

    #[test]
    fn zero_params_halve_the_state() {
        let p = GruCellParams::zeros(3, 4);
        let h = Tensor::row_vector(&[0.4, -1.0, 2.0, 0.0]);
        let out = gru_step(&p, &Tensor::row_vector(&[1.0, 2.0, 3.0]), &h).unwrap();
        assert_eq!(out, h.map(|v| 0.5 * v));
        let zero = gru_step(&p, &Tensor::zeros(&[1, 3]), &Tensor::zeros(&[1, 4])).unwrap();
        assert_eq!(zero, Tensor::zeros(&[1, 4]));
    }

    #[test]
    fn step_matches_scalar_reference() {
        let p = random_cell(3, 3, 42);
        let mut rng = seeded(43);
        let x = Tensor::uniform(&[2, 3], 1.0, &mut rng);
        let h = Tensor::uniform(&[2, 3], 1.0, &mut rng);
        let out = gru_step(&p, &x, &h).unwrap();
        for b in 0..2 {
            let expect = scalar_gru(&p, x.row(b), h.row(b));
            for (a, e) in out.row(b).iter().zip(&expect) {
                assert!((a - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn run_is_the_fold_of_steps() {
        let p = random_cell(2, 3, 7);
        let mut rng = seeded(8);
        let inputs = Tensor::uniform(&[2, 4, 2], 1.0, &mut rng);
        let h0 = Tensor::uniform(&[2, 3], 1.0, &mut rng);
        let (outs, fin) = gru_run(&p, &inputs, &h0).unwrap();
        let mut h = h0.clone();
        let steps = inputs.time_slices().unwrap();
        let out_steps = outs.time_slices().unwrap();
        for (x, o) in steps.iter().zip(&out_steps) {
            h = gru_step(&p, x, &h).unwrap();
            assert_eq!(&h, o);
        }
        assert_eq!(h, fin);

        let one = steps[0].clone().reshape(&[2, 1, 2]).unwrap();
        let (_, fin1) = gru_run(&p, &one, &h0).unwrap();
        assert_eq!(fin1, gru_step(&p, &steps[0], &h0).unwrap());
    }

    #[test]
    fn zero_params_three_steps_give_an_eighth() {
        let p = GruCellParams::zeros(2, 2);
        let v = Tensor::row_vector(&[0.8, -0.4]);
        let (_, fin) = gru_run(&p, &Tensor::ones(&[1, 3, 2]), &v).unwrap();
        assert_eq!(fin, v.map(|x| x / 8.0));
    }

    #[test]
    fn empty_sequence_is_rejected() {
        let p = GruCellParams::zeros(2, 2);
        let mut g = Graph::new();
        let mut store = ParamStore::new();
        p.insert_into(&mut store, "c").unwrap();
        let cell = GruVars::bind(&mut g, &store, "c").unwrap();
        let h = g.constant(Tensor::zeros(&[1, 2]));
        assert!(matches!(
            gru_run_on(&mut g, &cell, &[], h),
            Err(Error::EmptySequence(_))
        ));
    }

    #[test]
    fn step_rejects_shape_mismatch() {
        let p = GruCellParams::zeros(3, 4);
        let err = gru_step(&p, &Tensor::zeros(&[1, 2]), &Tensor::zeros(&[1, 4])).unwrap_err();
        assert!(matches!(err, Error::Dimension(_)));
    }

    #[test]
    fn stacked_zero_layers_halve_each_state() {
        let layers = [GruCellParams::zeros(2, 3), GruCellParams::zeros(3, 2)];
        let u = Tensor::row_vector(&[0.2, 0.4, -0.6]);
        let v = Tensor::row_vector(&[1.0, -1.0]);
        let (_, finals) =
            stacked_gru_run(&layers, &Tensor::ones(&[1, 1, 2]), &[u.clone(), v.clone()]).unwrap();
        assert_eq!(finals[0], u.map(|x| x / 2.0));
        assert_eq!(finals[1], v.map(|x| x / 2.0));
    }

    #[test]
    fn stacked_equals_manual_two_pass() {
        let l0 = random_cell(2, 3, 1);
        let l1 = random_cell(3, 2, 2);
        let mut rng = seeded(3);
        let inputs = Tensor::uniform(&[2, 3, 2], 1.0, &mut rng);
        let h0 = [Tensor::uniform(&[2, 3], 1.0, &mut rng), Tensor::uniform(&[2, 2], 1.0, &mut rng)];
        let (top, finals) = stacked_gru_run(&[l0.clone(), l1.clone()], &inputs, &h0).unwrap();
        let (mid, f0) = gru_run(&l0, &inputs, &h0[0]).unwrap();
        let (top2, f1) = gru_run(&l1, &mid, &h0[1]).unwrap();
        assert_eq!(top, top2);
        assert_eq!(finals, vec![f0, f1]);

        let (single, _) = stacked_gru_run(std::slice::from_ref(&l0), &inputs, &h0[..1]).unwrap();
        assert_eq!(single, mid);
    }

    #[test]
    fn stacked_rejects_broken_chain() {
        let layers = [GruCellParams::zeros(2, 3), GruCellParams::zeros(4, 2)];
        let h0 = [Tensor::zeros(&[1, 3]), Tensor::zeros(&[1, 2])];
        let err = stacked_gru_run(&layers, &Tensor::ones(&[1, 1, 2]), &h0).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn gru_cell_gradcheck() {
        let mut store = ParamStore::new();
        random_cell(4, 4, 99).insert_into(&mut store, "c").unwrap();
        let mut rng = seeded(100);
        let xs: Vec<Tensor> = (0..3).map(|_| Tensor::uniform(&[2, 4], 1.0, &mut rng)).collect();
        let h0 = Tensor::uniform(&[2, 4], 0.5, &mut rng);
        let report = gradcheck(
            |g, s| {
                let cell = GruVars::bind(g, s, "c")?;
                let x: Vec<Var> = xs.iter().map(|t| g.constant(t.clone())).collect();
                let h = g.constant(h0.clone());
                let out = gru_run_on(g, &cell, &x, h)?;
                let p = g.softmax(*out.last().unwrap());
                g.cross_entropy(p, &[1, 3], &[1.0, 1.0])
            },
            &store,
            1e-5,
            Coverage::All,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-6, "{report:?}");
    }

    #[test]
    fn stacked_gradcheck() {
        let mut store = ParamStore::new();
        random_cell(3, 6, 5).insert_into(&mut store, "l0").unwrap();
        random_cell(6, 5, 6).insert_into(&mut store, "l1").unwrap();
        let mut rng = seeded(7);
        let xs: Vec<Tensor> = (0..3).map(|_| Tensor::uniform(&[2, 3], 1.0, &mut rng)).collect();
        let report = gradcheck(
            |g, s| {
                let layers = [GruVars::bind(g, s, "l0")?, GruVars::bind(g, s, "l1")?];
                let x: Vec<Var> = xs.iter().map(|t| g.constant(t.clone())).collect();
                let h = [g.constant(Tensor::zeros(&[2, 6])), g.constant(Tensor::zeros(&[2, 5]))];
                let run = stacked_gru_run_on(g, &layers, &x, &h)?;
                let p = g.softmax(run.finals[1]);
                g.cross_entropy(p, &[0, 4], &[1.0, 1.0])
            },
            &store,
            1e-5,
            Coverage::All,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-5, "{report:?}");
    }

    #[test]
    fn embedding_lookup_and_errors() {
        let table = EmbeddingTable::new(
            Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]]),
            true,
        )
        .unwrap();
        let e = embed(&table, &[vec![0, 2]]).unwrap();
        assert_eq!(e.shape(), &[1, 2, 2]);
        assert_eq!(&e.data()[..2], &[1.0, 2.0]);
        match embed(&table, &[vec![0, 1], vec![2, 3]]) {
            Err(Error::Index { id: 3, position, .. }) => assert_eq!(position, "row 1, slot 1"),
            other => panic!("unexpected {other:?}"),
        }
    }

    proptest! {
        #[test]
        fn hidden_state_stays_in_unit_box(
            seed in 0u64..1000,
            h0 in proptest::collection::vec(-1.0f64..=1.0, 3),
            scale in 0.1f64..5.0,
        ) {
            let mut p = random_cell(2, 3, seed);
            for t in [&mut p.wz, &mut p.uz, &mut p.wh, &mut p.uh, &mut p.bz, &mut p.bh] {
                *t = t.map(|v| v * scale);
            }
            let mut rng = seeded(seed + 1);
            let inputs = Tensor::uniform(&[1, 6, 2], 3.0, &mut rng);
            let (outs, _) = gru_run(&p, &inputs, &Tensor::row_vector(&h0)).unwrap();
            prop_assert!(outs.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        }
    }
}
