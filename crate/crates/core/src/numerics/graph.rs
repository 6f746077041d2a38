//! Reverse-mode differentiation over a linear tape.
//!
//! A [`Graph`] records every operation applied during one forward pass.
//! Parameters enter the tape by name from a [`ParamStore`]; each parameter
//! is recorded once per graph, so a weight reused across time steps
//! accumulates its gradient in a single place. [`Graph::backward`] replays
//! the tape in reverse and returns gradients keyed by parameter.

use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;

use super::tensor::{self, broadcast_kind, Broadcast, Tensor, PROB_FLOOR};
use crate::error::{Error, Result};

/// Ordered collection of named parameter tensors.
///
/// Tensors are reference counted so a graph can borrow them without
/// copying; mutation goes through copy-on-write.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Arc<Tensor>>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<usize> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name {name:?}")));
        }
        let id = self.names.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(Arc::new(value));
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| &*self.values[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        let i = self.index_of(name)?;
        Some(Arc::make_mut(&mut self.values[i]))
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn value(&self, id: usize) -> &Tensor {
        &self.values[id]
    }

    pub fn value_mut(&mut self, id: usize) -> &mut Tensor {
        Arc::make_mut(&mut self.values[id])
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.names.iter().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(self.values.iter().map(|v| &**v))
    }

    pub fn num_values(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    /// Rounds every parameter to `f32` precision, the precision of
    /// checkpoints on disk.
    pub fn round_to_f32(&mut self) {
        for v in &mut self.values {
            Arc::make_mut(v).round_to_f32();
        }
    }

    fn shared(&self, id: usize) -> Arc<Tensor> {
        Arc::clone(&self.values[id])
    }
}

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param(usize),
    MatMul(Var, Var),
    Add(Var, Var, Broadcast),
    Mul(Var, Var, Broadcast),
    OneMinus(Var),
    Sigmoid(Var),
    Tanh(Var),
    Concat(Var, Var, usize),
    StackRows(Vec<Var>),
    Scale(Var, Vec<f64>),
    Gather(Var, Vec<usize>),
    Softmax(Var),
    CrossEntropy {
        probs: Var,
        targets: Vec<usize>,
        mask: Vec<f64>,
        denom: f64,
    },
}

#[derive(Debug)]
struct Node {
    value: Arc<Tensor>,
    op: Op,
    needs_grad: bool,
}

/// Gradients produced by [`Graph::backward`], indexed like the parameter
/// store the graph read from.
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    by_param: Vec<Option<Tensor>>,
}

impl Gradients {
    /// One optional gradient per parameter id, in store order.
    pub fn from_parts(by_param: Vec<Option<Tensor>>) -> Self {
        Gradients { by_param }
    }

    pub fn get(&self, id: usize) -> Option<&Tensor> {
        self.by_param.get(id).and_then(Option::as_ref)
    }

    pub fn by_name<'a>(&'a self, store: &ParamStore, name: &str) -> Option<&'a Tensor> {
        store.index_of(name).and_then(|id| self.get(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &Tensor)> {
        self.by_param
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.as_ref().map(|g| (i, g)))
    }

    pub fn len(&self) -> usize {
        self.by_param.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_param.iter().all(Option::is_none)
    }
}

/// One forward pass worth of recorded operations.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<usize, Var>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.push_shared(Arc::new(value), op, needs_grad)
    }

    fn push_shared(&mut self, value: Arc<Tensor>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant, false)
    }

    /// Records the named parameter (once per graph).
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        let id = store
            .index_of(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter {name:?}")))?;
        Ok(self.param_by_id(store, id))
    }

    pub fn param_by_id(&mut self, store: &ParamStore, id: usize) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push_shared(store.shared(id), Op::Param(id), true);
        self.params.insert(id, v);
        v
    }

    /// Records a parameter's value without tracking its gradient.
    pub fn frozen_param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        let id = store
            .index_of(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter {name:?}")))?;
        Ok(self.push_shared(store.shared(id), Op::Constant, false))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = tensor::matmul(self.value(a), self.value(b))?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::MatMul(a, b), ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let kind = broadcast_kind(self.value(a), self.value(b))?;
        let out = tensor::add(self.value(a), self.value(b))?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Add(a, b, kind), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let kind = broadcast_kind(self.value(a), self.value(b))?;
        let out = tensor::mul(self.value(a), self.value(b))?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Mul(a, b, kind), ng))
    }

    /// `1 - x`, elementwise.
    pub fn one_minus(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| 1.0 - v);
        let ng = self.needs(x);
        self.push(out, Op::OneMinus(x), ng)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = tensor::sigmoid(self.value(x));
        let ng = self.needs(x);
        self.push(out, Op::Sigmoid(x), ng)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = tensor::tanh(self.value(x));
        let ng = self.needs(x);
        self.push(out, Op::Tanh(x), ng)
    }

    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = tensor::concat(self.value(a), self.value(b))?;
        let split = self.value(a).rows_cols().1;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Concat(a, b, split), ng))
    }

    /// Stacks matrices with equal column counts on top of each other.
    pub fn stack_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::EmptySequence("nothing to stack".into()))?;
        let cols = self.value(first).rows_cols().1;
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            let (r, c) = t.rows_cols();
            if c != cols || t.rank() != 2 {
                return Err(Error::Dimension(format!(
                    "stack_rows: {:?} does not match width {cols}",
                    t.shape()
                )));
            }
            rows += r;
            data.extend_from_slice(t.data());
        }
        let out = Tensor::from_vec(vec![rows, cols], data)?;
        let ng = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(out, Op::StackRows(parts.to_vec()), ng))
    }

    /// Inverted dropout. With `rng == None` (inference) or `rate == 0` the
    /// input handle is returned untouched.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, rng: Option<&mut R>) -> Result<Var> {
        tensor::check_dropout_rate(rate)?;
        let Some(rng) = rng else { return Ok(x) };
        if rate == 0.0 {
            return Ok(x);
        }
        let mask = tensor::dropout_mask(self.value(x).len(), rate, rng);
        let src = self.value(x);
        let data = src.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let out = Tensor::from_vec(src.shape().to_vec(), data)?;
        let ng = self.needs(x);
        Ok(self.push(out, Op::Scale(x, mask), ng))
    }

    /// Row lookup: output row `i` is `table[ids[i]]`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let (rows, cols) = t.rows_cols();
        if ids.is_empty() {
            return Err(Error::EmptySequence("gather with no ids".into()));
        }
        let mut data = Vec::with_capacity(ids.len() * cols);
        for (pos, &id) in ids.iter().enumerate() {
            if id >= rows {
                return Err(Error::Index {
                    id,
                    bound: rows,
                    position: format!("batch row {pos}"),
                });
            }
            data.extend_from_slice(t.row(id));
        }
        let out = Tensor::from_vec(vec![ids.len(), cols], data)?;
        let ng = self.needs(table);
        Ok(self.push(out, Op::Gather(table, ids.to_vec()), ng))
    }

    pub fn softmax(&mut self, logits: Var) -> Var {
        let out = tensor::softmax(self.value(logits));
        let ng = self.needs(logits);
        self.push(out, Op::Softmax(logits), ng)
    }

    /// Masked categorical cross-entropy on probability rows; a scalar node.
    pub fn cross_entropy(&mut self, probs: Var, targets: &[usize], mask: &[f64]) -> Result<Var> {
        let (loss, denom) = tensor::cross_entropy_checked(self.value(probs), targets, mask)?;
        let ng = self.needs(probs);
        Ok(self.push(
            Tensor::from_vec(vec![1], vec![loss])?,
            Op::CrossEntropy {
                probs,
                targets: targets.to_vec(),
                mask: mask.to_vec(),
                denom,
            },
            ng,
        ))
    }

    /// Back-propagates from the scalar `loss` and returns parameter
    /// gradients, sized for `store`.
    pub fn backward(&self, loss: Var, store: &ParamStore) -> Result<Gradients> {
        let lv = self.value(loss);
        match lv.scalar() {
            Some(v) if v.is_finite() => {}
            Some(v) => return Err(Error::Validity(format!("loss is not finite: {v}"))),
            None => {
                return Err(Error::Dimension(format!(
                    "backward needs a scalar loss, got shape {:?}",
                    lv.shape()
                )))
            }
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::ones(lv.shape()));
        let mut out = Gradients {
            by_param: vec![None; store.len()],
        };

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => {
                    if *id >= out.by_param.len() {
                        return Err(Error::Config(format!(
                            "parameter id {id} not in the store used for backward"
                        )));
                    }
                    accumulate(&mut out.by_param[*id], g);
                }
                Op::MatMul(a, b) => {
                    if self.needs(*a) {
                        let da = tensor::matmul_nt(&g, self.value(*b));
                        accumulate(&mut grads[a.0], da);
                    }
                    if self.needs(*b) {
                        let db = tensor::matmul_tn(self.value(*a), &g);
                        accumulate(&mut grads[b.0], db);
                    }
                }
                Op::Add(a, b, kind) => {
                    if self.needs(*b) {
                        let db = reduce_broadcast(&g, self.value(*b), *kind);
                        accumulate(&mut grads[b.0], db);
                    }
                    if self.needs(*a) {
                        accumulate(&mut grads[a.0], g);
                    }
                }
                Op::Mul(a, b, kind) => {
                    if self.needs(*a) {
                        let da = tensor::mul(&g, self.value(*b))?;
                        accumulate(&mut grads[a.0], da);
                    }
                    if self.needs(*b) {
                        let prod = tensor::mul(&g, self.value(*a))?;
                        let db = reduce_broadcast(&prod, self.value(*b), *kind);
                        accumulate(&mut grads[b.0], db);
                    }
                }
                Op::OneMinus(x) => {
                    accumulate(&mut grads[x.0], g.map(|v| -v));
                }
                Op::Sigmoid(x) => {
                    let y = &node.value;
                    let dx = zip_map(&g, y, |gv, yv| gv * yv * (1.0 - yv));
                    accumulate(&mut grads[x.0], dx);
                }
                Op::Tanh(x) => {
                    let y = &node.value;
                    let dx = zip_map(&g, y, |gv, yv| gv * (1.0 - yv * yv));
                    accumulate(&mut grads[x.0], dx);
                }
                Op::Concat(a, b, split) => {
                    let (da, db) = tensor::split_columns(&g, *split)?;
                    if self.needs(*a) {
                        accumulate(&mut grads[a.0], da);
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads[b.0], db);
                    }
                }
                Op::StackRows(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let shape = self.value(*p).shape().to_vec();
                        let n: usize = shape.iter().product();
                        if self.needs(*p) {
                            let piece =
                                Tensor::from_vec(shape, g.data()[offset..offset + n].to_vec())?;
                            accumulate(&mut grads[p.0], piece);
                        }
                        offset += n;
                    }
                }
                Op::Scale(x, mask) => {
                    let data = g.data().iter().zip(mask).map(|(a, b)| a * b).collect();
                    accumulate(&mut grads[x.0], Tensor::from_vec(g.shape().to_vec(), data)?);
                }
                Op::Gather(table, ids) => {
                    let tv = self.value(*table);
                    let (_, cols) = tv.rows_cols();
                    let mut dt = Tensor::zeros(tv.shape());
                    for (i, &id) in ids.iter().enumerate() {
                        let src = &g.data()[i * cols..(i + 1) * cols];
                        let dst = &mut dt.data_mut()[id * cols..(id + 1) * cols];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                    accumulate(&mut grads[table.0], dt);
                }
                Op::Softmax(x) => {
                    let p = &node.value;
                    let (rows, cols) = p.rows_cols();
                    let mut dx = Vec::with_capacity(p.len());
                    for r in 0..rows {
                        let pr = &p.data()[r * cols..(r + 1) * cols];
                        let gr = &g.data()[r * cols..(r + 1) * cols];
                        let dot: f64 = pr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        dx.extend(pr.iter().zip(gr).map(|(pv, gv)| pv * (gv - dot)));
                    }
                    accumulate(&mut grads[x.0], Tensor::from_vec(p.shape().to_vec(), dx)?);
                }
                Op::CrossEntropy {
                    probs,
                    targets,
                    mask,
                    denom,
                } => {
                    let upstream = g.data()[0];
                    let pv = self.value(*probs);
                    let (_, cols) = pv.rows_cols();
                    let mut dp = Tensor::zeros(pv.shape());
                    for (r, (&t, &m)) in targets.iter().zip(mask).enumerate() {
                        let p = pv.data()[r * cols + t];
                        // Below the floor the loss is locally constant.
                        if m != 0.0 && p > PROB_FLOOR {
                            dp.data_mut()[r * cols + t] = -upstream * m / (denom * p);
                        }
                    }
                    accumulate(&mut grads[probs.0], dp);
                }
            }
        }
        Ok(out)
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(existing) => {
            for (e, v) in existing.data_mut().iter_mut().zip(g.data()) {
                *e += v;
            }
        }
        None => *slot = Some(g),
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_vec(a.shape().to_vec(), data).expect("same shape")
}

/// Sums `g` back down to the shape of the broadcast operand.
fn reduce_broadcast(g: &Tensor, target: &Tensor, kind: Broadcast) -> Tensor {
    match kind {
        Broadcast::Same => g.clone(),
        Broadcast::Rows => {
            let cols = target.len();
            let mut acc = vec![0.0; cols];
            for (i, v) in g.data().iter().enumerate() {
                acc[i % cols] += v;
            }
            Tensor::from_vec(target.shape().to_vec(), acc).expect("target shape")
        }
    }
}
