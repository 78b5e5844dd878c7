//! Define-by-run computation tape with reverse-mode differentiation.
//!
//! A `Graph` records each primitive application in order; `backward` walks
//! the tape in reverse, accumulating gradients into parents. Named parameter
//! leaves are registered once per graph and read back as a name -> gradient
//! map; a parameter the loss never touches reports a zero gradient.
//!
//! Shape agreement between operands is a programming error and panics;
//! data-dependent failures (all-false softmax mask, bad dropout rate) return
//! `Err`.

use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub type TensorId = usize;

/// Sparse weighted neighbor aggregation: out[u] = sum_v w[v,u] * h[v].
///
/// `incoming[u]` lists (v, w_vu) in ascending v; `outgoing[v]` lists
/// (u, w_vu). Forward sums each output entry's terms in value order, so node
/// relabelings that permute rows produce bit-identical permuted outputs.
#[derive(Debug, Clone)]
pub struct AggregationPlan {
    pub n: usize,
    pub incoming: Vec<Vec<(usize, f64)>>,
    pub outgoing: Vec<Vec<(usize, f64)>>,
}

impl AggregationPlan {
    pub fn new(n: usize, incoming: Vec<Vec<(usize, f64)>>) -> AggregationPlan {
        let mut outgoing: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for (u, list) in incoming.iter().enumerate() {
            for &(v, w) in list {
                outgoing[v].push((u, w));
            }
        }
        AggregationPlan { n, incoming, outgoing }
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(TensorId, TensorId),
    /// (n x m) + broadcast (1 x m)
    AddBias(TensorId, TensorId),
    AddN(Vec<TensorId>),
    /// elementwise product, same shape
    Mul(TensorId, TensorId),
    /// forward was x * mul + add; only mul matters for the backward pass
    AffineScalar { x: TensorId, mul: f64 },
    MatMul(TensorId, TensorId),
    Sigmoid(TensorId),
    Tanh(TensorId),
    Relu(TensorId),
    ConcatCols(Vec<TensorId>),
    SelectRows { x: TensorId, indices: Vec<usize> },
    SliceCols { x: TensorId, start: usize },
    Reshape(TensorId),
    /// (1 x m) -> (count x m)
    RepeatRows { x: TensorId, count: usize },
    MeanRows(TensorId),
    SumAll(TensorId),
    MaskedSoftmax { x: TensorId, mask: Vec<bool> },
    CrossEntropy { probs: TensorId, target: usize },
    /// mask entries are 0 or 1/(1-rate)
    Dropout { x: TensorId, mask: Vec<f64> },
    Aggregate { h: TensorId, plan: Arc<AggregationPlan> },
}

struct NodeData {
    value: Tensor,
    grad: Option<Tensor>,
    needs_grad: bool,
    op: Op,
}

/// Probability floor inside cross-entropy; keeps the loss finite for
/// zero-probability targets.
pub const CE_PROB_FLOOR: f64 = 1e-12;

#[derive(Default)]
pub struct Graph {
    nodes: Vec<NodeData>,
    params: Vec<(String, TensorId)>,
    by_name: HashMap<String, TensorId>,
}

impl Graph {
    pub fn new() -> Graph {
        Graph::default()
    }

    fn push(&mut self, value: Tensor, needs_grad: bool, op: Op) -> TensorId {
        debug_assert!(value.all_finite(), "op produced a non-finite value");
        self.nodes.push(NodeData {
            value,
            grad: None,
            needs_grad,
            op,
        });
        self.nodes.len() - 1
    }

    fn needs(&self, id: TensorId) -> bool {
        self.nodes[id].needs_grad
    }

    pub fn value(&self, id: TensorId) -> &Tensor {
        &self.nodes[id].value
    }

    pub fn grad(&self, id: TensorId) -> Option<&Tensor> {
        self.nodes[id].grad.as_ref()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, value: Tensor) -> TensorId {
        self.push(value, false, Op::Leaf)
    }

    /// Differentiable named parameter leaf. Binding the same name again
    /// returns the original node.
    pub fn param(&mut self, name: &str, value: &Tensor) -> TensorId {
        if let Some(&id) = self.by_name.get(name) {
            debug_assert_eq!(self.nodes[id].value.shape(), value.shape());
            return id;
        }
        let id = self.push(value.clone(), true, Op::Leaf);
        self.params.push((name.to_string(), id));
        self.by_name.insert(name.to_string(), id);
        id
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let (ta, tb) = (&self.nodes[a].value, &self.nodes[b].value);
        assert_eq!(ta.shape(), tb.shape(), "add shape mismatch");
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::from_vec(ta.rows(), ta.cols(), data);
        let needs = self.needs(a) || self.needs(b);
        self.push(value, needs, Op::Add(a, b))
    }

    /// Row-broadcast addition of a 1 x m bias to an n x m tensor.
    pub fn add_bias(&mut self, x: TensorId, bias: TensorId) -> TensorId {
        let (tx, tb) = (&self.nodes[x].value, &self.nodes[bias].value);
        assert_eq!(tb.rows(), 1, "bias must be a row vector");
        assert_eq!(tx.cols(), tb.cols(), "bias width mismatch");
        let mut value = tx.clone();
        for r in 0..value.rows() {
            for c in 0..value.cols() {
                let v = value.get(r, c) + tb.get(0, c);
                value.set(r, c, v);
            }
        }
        let needs = self.needs(x) || self.needs(bias);
        self.push(value, needs, Op::AddBias(x, bias))
    }

    pub fn add_n(&mut self, terms: &[TensorId]) -> TensorId {
        assert!(!terms.is_empty(), "add_n needs at least one term");
        let shape = self.nodes[terms[0]].value.shape();
        let mut value = Tensor::zeros(shape.0, shape.1);
        for &t in terms {
            assert_eq!(self.nodes[t].value.shape(), shape, "add_n shape mismatch");
            for (o, v) in value.data_mut().iter_mut().zip(self.nodes[t].value.data()) {
                *o += v;
            }
        }
        let needs = terms.iter().any(|&t| self.needs(t));
        self.push(value, needs, Op::AddN(terms.to_vec()))
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let (ta, tb) = (&self.nodes[a].value, &self.nodes[b].value);
        assert_eq!(ta.shape(), tb.shape(), "mul shape mismatch");
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let value = Tensor::from_vec(ta.rows(), ta.cols(), data);
        let needs = self.needs(a) || self.needs(b);
        self.push(value, needs, Op::Mul(a, b))
    }

    pub fn affine(&mut self, x: TensorId, mul: f64, add: f64) -> TensorId {
        let value = self.nodes[x].value.map(|v| v * mul + add);
        let needs = self.needs(x);
        self.push(value, needs, Op::AffineScalar { x, mul })
    }

    pub fn scale(&mut self, x: TensorId, s: f64) -> TensorId {
        self.affine(x, s, 0.0)
    }

    pub fn one_minus(&mut self, x: TensorId) -> TensorId {
        self.affine(x, -1.0, 1.0)
    }

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let (ta, tb) = (&self.nodes[a].value, &self.nodes[b].value);
        assert_eq!(
            ta.cols(),
            tb.rows(),
            "matmul inner dimension mismatch: {:?} x {:?}",
            ta.shape(),
            tb.shape()
        );
        let (n, k, m) = (ta.rows(), ta.cols(), tb.cols());
        let mut value = Tensor::zeros(n, m);
        for i in 0..n {
            for p in 0..k {
                let aip = ta.get(i, p);
                if aip == 0.0 {
                    continue;
                }
                let brow = tb.row(p);
                let out = &mut value.data_mut()[i * m..(i + 1) * m];
                for (o, &bv) in out.iter_mut().zip(brow) {
                    *o += aip * bv;
                }
            }
        }
        let needs = self.needs(a) || self.needs(b);
        self.push(value, needs, Op::MatMul(a, b))
    }

    pub fn sigmoid(&mut self, x: TensorId) -> TensorId {
        let value = self.nodes[x].value.map(stable_sigmoid);
        let needs = self.needs(x);
        self.push(value, needs, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: TensorId) -> TensorId {
        let value = self.nodes[x].value.map(f64::tanh);
        let needs = self.needs(x);
        self.push(value, needs, Op::Tanh(x))
    }

    pub fn relu(&mut self, x: TensorId) -> TensorId {
        let value = self.nodes[x].value.map(|v| if v > 0.0 { v } else { 0.0 });
        let needs = self.needs(x);
        self.push(value, needs, Op::Relu(x))
    }

    /// Concatenate along columns; all inputs must share the row count.
    pub fn concat_cols(&mut self, parts: &[TensorId]) -> TensorId {
        assert!(!parts.is_empty(), "concat_cols needs at least one part");
        let rows = self.nodes[parts[0]].value.rows();
        let total: usize = parts.iter().map(|&p| self.nodes[p].value.cols()).sum();
        let mut value = Tensor::zeros(rows, total);
        let mut offset = 0;
        for &p in parts {
            let tp = &self.nodes[p].value;
            assert_eq!(tp.rows(), rows, "concat_cols row mismatch");
            for r in 0..rows {
                for c in 0..tp.cols() {
                    value.set(r, offset + c, tp.get(r, c));
                }
            }
            offset += tp.cols();
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        self.push(value, needs, Op::ConcatCols(parts.to_vec()))
    }

    /// Gather rows by index; duplicate indices are permitted (their gradients
    /// accumulate).
    pub fn select_rows(&mut self, x: TensorId, indices: &[usize]) -> TensorId {
        let tx = &self.nodes[x].value;
        let mut value = Tensor::zeros(indices.len(), tx.cols());
        for (i, &idx) in indices.iter().enumerate() {
            assert!(idx < tx.rows(), "select_rows index out of range");
            for c in 0..tx.cols() {
                value.set(i, c, tx.get(idx, c));
            }
        }
        let needs = self.needs(x);
        self.push(
            value,
            needs,
            Op::SelectRows {
                x,
                indices: indices.to_vec(),
            },
        )
    }

    pub fn slice_cols(&mut self, x: TensorId, start: usize, end: usize) -> TensorId {
        let tx = &self.nodes[x].value;
        assert!(start < end && end <= tx.cols(), "slice_cols out of range");
        let mut value = Tensor::zeros(tx.rows(), end - start);
        for r in 0..tx.rows() {
            for c in start..end {
                value.set(r, c - start, tx.get(r, c));
            }
        }
        let needs = self.needs(x);
        self.push(value, needs, Op::SliceCols { x, start })
    }

    pub fn reshape(&mut self, x: TensorId, rows: usize, cols: usize) -> TensorId {
        let tx = &self.nodes[x].value;
        assert_eq!(tx.len(), rows * cols, "reshape length mismatch");
        let value = Tensor::from_vec(rows, cols, tx.data().to_vec());
        let needs = self.needs(x);
        self.push(value, needs, Op::Reshape(x))
    }

    pub fn repeat_rows(&mut self, x: TensorId, count: usize) -> TensorId {
        let tx = &self.nodes[x].value;
        assert_eq!(tx.rows(), 1, "repeat_rows input must be a row vector");
        assert!(count >= 1, "repeat_rows count must be positive");
        let mut data = Vec::with_capacity(count * tx.cols());
        for _ in 0..count {
            data.extend_from_slice(tx.row(0));
        }
        let value = Tensor::from_vec(count, tx.cols(), data);
        let needs = self.needs(x);
        self.push(value, needs, Op::RepeatRows { x, count })
    }

    pub fn mean_rows(&mut self, x: TensorId) -> TensorId {
        let tx = &self.nodes[x].value;
        assert!(tx.rows() >= 1, "mean_rows on empty tensor");
        let k = tx.rows() as f64;
        let mut value = Tensor::zeros(1, tx.cols());
        for c in 0..tx.cols() {
            let mut s = 0.0;
            for r in 0..tx.rows() {
                s += tx.get(r, c);
            }
            value.set(0, c, s / k);
        }
        let needs = self.needs(x);
        self.push(value, needs, Op::MeanRows(x))
    }

    pub fn sum_all(&mut self, x: TensorId) -> TensorId {
        let s: f64 = self.nodes[x].value.data().iter().sum();
        let needs = self.needs(x);
        self.push(Tensor::scalar(s), needs, Op::SumAll(x))
    }

    /// Softmax of a 1 x n row over the true mask entries; false entries are
    /// exactly 0. Max-subtraction keeps it stable for large scores.
    pub fn masked_softmax(&mut self, x: TensorId, mask: &[bool]) -> Result<TensorId> {
        let tx = &self.nodes[x].value;
        assert_eq!(tx.rows(), 1, "masked_softmax input must be a row vector");
        assert_eq!(tx.cols(), mask.len(), "mask length mismatch");
        if !mask.iter().any(|&m| m) {
            return Err(Error::InvalidArgument("masked_softmax: all-false mask".into()));
        }
        let mut max = f64::NEG_INFINITY;
        for (v, &m) in tx.row(0).iter().zip(mask) {
            if m && *v > max {
                max = *v;
            }
        }
        let mut value = Tensor::zeros(1, mask.len());
        let mut denom = 0.0;
        for (c, (&v, &m)) in tx.row(0).iter().zip(mask).enumerate() {
            if m {
                let e = (v - max).exp();
                value.set(0, c, e);
                denom += e;
            }
        }
        for c in 0..mask.len() {
            if mask[c] {
                let v = value.get(0, c) / denom;
                value.set(0, c, v);
            }
        }
        let needs = self.needs(x);
        Ok(self.push(
            value,
            needs,
            Op::MaskedSoftmax {
                x,
                mask: mask.to_vec(),
            },
        ))
    }

    /// -ln(max(p[target], CE_PROB_FLOOR)) for a 1 x n probability row.
    pub fn cross_entropy(&mut self, probs: TensorId, target: usize) -> TensorId {
        let tp = &self.nodes[probs].value;
        assert_eq!(tp.rows(), 1, "cross_entropy input must be a row vector");
        assert!(target < tp.cols(), "cross_entropy target out of range");
        let p = tp.get(0, target);
        let loss = -(p.max(CE_PROB_FLOOR)).ln();
        let needs = self.needs(probs);
        self.push(Tensor::scalar(loss), needs, Op::CrossEntropy { probs, target })
    }

    /// Inverted dropout. Identity (no tape node) when not training or rate 0.
    pub fn dropout<R: Rng>(
        &mut self,
        x: TensorId,
        rate: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<TensorId> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidArgument(format!(
                "dropout rate must be in [0,1), got {rate}"
            )));
        }
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - rate);
        let tx = &self.nodes[x].value;
        let mask: Vec<f64> = (0..tx.len())
            .map(|_| if rng.random_range(0.0..1.0) < rate { 0.0 } else { keep })
            .collect();
        let data = tx.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let value = Tensor::from_vec(tx.rows(), tx.cols(), data);
        let needs = self.needs(x);
        Ok(self.push(value, needs, Op::Dropout { x, mask }))
    }

    /// Neighbor aggregation over an n x d state matrix (see
    /// [`AggregationPlan`]). Entries are summed in value order, making the
    /// result exactly permutation-equivariant.
    pub fn aggregate(&mut self, h: TensorId, plan: &Arc<AggregationPlan>) -> TensorId {
        let th = &self.nodes[h].value;
        assert_eq!(th.rows(), plan.n, "aggregation plan size mismatch");
        let d = th.cols();
        let mut value = Tensor::zeros(plan.n, d);
        let mut terms: Vec<f64> = Vec::new();
        for u in 0..plan.n {
            for c in 0..d {
                terms.clear();
                terms.extend(plan.incoming[u].iter().map(|&(v, w)| w * th.get(v, c)));
                terms.sort_unstable_by(f64::total_cmp);
                let s: f64 = terms.iter().sum();
                value.set(u, c, s);
            }
        }
        let needs = self.needs(h);
        self.push(
            value,
            needs,
            Op::Aggregate {
                h,
                plan: Arc::clone(plan),
            },
        )
    }

    fn accumulate(&mut self, id: TensorId, delta: &Tensor) {
        let node = &mut self.nodes[id];
        let grad = node
            .grad
            .get_or_insert_with(|| Tensor::zeros(node.value.rows(), node.value.cols()));
        debug_assert_eq!(grad.shape(), delta.shape());
        for (g, d) in grad.data_mut().iter_mut().zip(delta.data()) {
            *g += d;
        }
    }

    /// Reverse pass from a scalar loss. Gradients of all reachable
    /// `needs_grad` nodes are populated; everything else stays `None`.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        let shape = self.nodes[loss].value.shape();
        if shape != (1, 1) {
            return Err(Error::NonScalarLoss {
                rows: shape.0,
                cols: shape.1,
            });
        }
        self.nodes[loss].grad = Some(Tensor::scalar(1.0));
        for id in (0..=loss).rev() {
            if !self.nodes[id].needs_grad || self.nodes[id].grad.is_none() {
                continue;
            }
            self.propagate(id);
        }
        Ok(())
    }

    fn propagate(&mut self, id: TensorId) {
        let go = self.nodes[id].grad.clone().expect("grad present");
        // Deltas are computed from immutable reads of earlier tape entries,
        // then accumulated; no parent tensor is cloned.
        let mut deltas: Vec<(TensorId, Tensor)> = Vec::new();
        match &self.nodes[id].op {
            Op::Leaf => {}
            &Op::Add(a, b) => {
                if self.needs(a) {
                    deltas.push((a, go.clone()));
                }
                if self.needs(b) {
                    deltas.push((b, go.clone()));
                }
            }
            &Op::AddBias(x, bias) => {
                if self.needs(x) {
                    deltas.push((x, go.clone()));
                }
                if self.needs(bias) {
                    let mut db = Tensor::zeros(1, go.cols());
                    for r in 0..go.rows() {
                        for c in 0..go.cols() {
                            let v = db.get(0, c) + go.get(r, c);
                            db.set(0, c, v);
                        }
                    }
                    deltas.push((bias, db));
                }
            }
            Op::AddN(terms) => {
                for &t in terms {
                    if self.needs(t) {
                        deltas.push((t, go.clone()));
                    }
                }
            }
            &Op::Mul(a, b) => {
                if self.needs(a) {
                    let tb = &self.nodes[b].value;
                    let da = Tensor::from_vec(
                        go.rows(),
                        go.cols(),
                        go.data().iter().zip(tb.data()).map(|(g, v)| g * v).collect(),
                    );
                    deltas.push((a, da));
                }
                if self.needs(b) {
                    let ta = &self.nodes[a].value;
                    let db = Tensor::from_vec(
                        go.rows(),
                        go.cols(),
                        go.data().iter().zip(ta.data()).map(|(g, v)| g * v).collect(),
                    );
                    deltas.push((b, db));
                }
            }
            &Op::AffineScalar { x, mul } => {
                if self.needs(x) {
                    deltas.push((x, go.map(|g| g * mul)));
                }
            }
            &Op::MatMul(a, b) => {
                if self.needs(a) {
                    // dA = dY . B^T
                    let tb = &self.nodes[b].value;
                    let (n, m, k) = (go.rows(), go.cols(), tb.rows());
                    let mut da = Tensor::zeros(n, k);
                    for i in 0..n {
                        for p in 0..k {
                            let mut s = 0.0;
                            let grow = go.row(i);
                            let brow = tb.row(p);
                            for j in 0..m {
                                s += grow[j] * brow[j];
                            }
                            da.set(i, p, s);
                        }
                    }
                    deltas.push((a, da));
                }
                if self.needs(b) {
                    // dB = A^T . dY
                    let ta = &self.nodes[a].value;
                    let (n, m, k) = (go.rows(), go.cols(), ta.cols());
                    let mut db = Tensor::zeros(k, m);
                    for i in 0..n {
                        for p in 0..k {
                            let aip = ta.get(i, p);
                            if aip == 0.0 {
                                continue;
                            }
                            let grow = go.row(i);
                            let drow = &mut db.data_mut()[p * m..(p + 1) * m];
                            for j in 0..m {
                                drow[j] += aip * grow[j];
                            }
                        }
                    }
                    deltas.push((b, db));
                }
            }
            &Op::Sigmoid(x) => {
                if self.needs(x) {
                    let y = &self.nodes[id].value;
                    let dx = Tensor::from_vec(
                        go.rows(),
                        go.cols(),
                        go.data()
                            .iter()
                            .zip(y.data())
                            .map(|(g, y)| g * y * (1.0 - y))
                            .collect(),
                    );
                    deltas.push((x, dx));
                }
            }
            &Op::Tanh(x) => {
                if self.needs(x) {
                    let y = &self.nodes[id].value;
                    let dx = Tensor::from_vec(
                        go.rows(),
                        go.cols(),
                        go.data()
                            .iter()
                            .zip(y.data())
                            .map(|(g, y)| g * (1.0 - y * y))
                            .collect(),
                    );
                    deltas.push((x, dx));
                }
            }
            &Op::Relu(x) => {
                if self.needs(x) {
                    let tx = &self.nodes[x].value;
                    let dx = Tensor::from_vec(
                        go.rows(),
                        go.cols(),
                        go.data()
                            .iter()
                            .zip(tx.data())
                            .map(|(g, v)| if *v > 0.0 { *g } else { 0.0 })
                            .collect(),
                    );
                    deltas.push((x, dx));
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let w = self.nodes[p].value.cols();
                    if self.needs(p) {
                        let mut dp = Tensor::zeros(go.rows(), w);
                        for r in 0..go.rows() {
                            for c in 0..w {
                                dp.set(r, c, go.get(r, offset + c));
                            }
                        }
                        deltas.push((p, dp));
                    }
                    offset += w;
                }
            }
            Op::SelectRows { x, indices } => {
                if self.needs(*x) {
                    let shape = self.nodes[*x].value.shape();
                    let mut dx = Tensor::zeros(shape.0, shape.1);
                    for (i, &idx) in indices.iter().enumerate() {
                        for c in 0..go.cols() {
                            let v = dx.get(idx, c) + go.get(i, c);
                            dx.set(idx, c, v);
                        }
                    }
                    deltas.push((*x, dx));
                }
            }
            &Op::SliceCols { x, start } => {
                if self.needs(x) {
                    let shape = self.nodes[x].value.shape();
                    let mut dx = Tensor::zeros(shape.0, shape.1);
                    for r in 0..go.rows() {
                        for c in 0..go.cols() {
                            dx.set(r, start + c, go.get(r, c));
                        }
                    }
                    deltas.push((x, dx));
                }
            }
            &Op::Reshape(x) => {
                if self.needs(x) {
                    let shape = self.nodes[x].value.shape();
                    let dx = Tensor::from_vec(shape.0, shape.1, go.data().to_vec());
                    deltas.push((x, dx));
                }
            }
            &Op::RepeatRows { x, count } => {
                if self.needs(x) {
                    let mut dx = Tensor::zeros(1, go.cols());
                    for r in 0..count {
                        for c in 0..go.cols() {
                            let v = dx.get(0, c) + go.get(r, c);
                            dx.set(0, c, v);
                        }
                    }
                    deltas.push((x, dx));
                }
            }
            &Op::MeanRows(x) => {
                if self.needs(x) {
                    let shape = self.nodes[x].value.shape();
                    let k = shape.0 as f64;
                    let mut dx = Tensor::zeros(shape.0, shape.1);
                    for r in 0..shape.0 {
                        for c in 0..shape.1 {
                            dx.set(r, c, go.get(0, c) / k);
                        }
                    }
                    deltas.push((x, dx));
                }
            }
            &Op::SumAll(x) => {
                if self.needs(x) {
                    let shape = self.nodes[x].value.shape();
                    let g = go.scalar_value();
                    let dx = Tensor::from_vec(shape.0, shape.1, vec![g; shape.0 * shape.1]);
                    deltas.push((x, dx));
                }
            }
            Op::MaskedSoftmax { x, mask } => {
                if self.needs(*x) {
                    let y = &self.nodes[id].value;
                    let mut dot = 0.0;
                    for c in 0..mask.len() {
                        if mask[c] {
                            dot += y.get(0, c) * go.get(0, c);
                        }
                    }
                    let mut dx = Tensor::zeros(1, mask.len());
                    for c in 0..mask.len() {
                        if mask[c] {
                            dx.set(0, c, y.get(0, c) * (go.get(0, c) - dot));
                        }
                    }
                    deltas.push((*x, dx));
                }
            }
            &Op::CrossEntropy { probs, target } => {
                if self.needs(probs) {
                    let p = self.nodes[probs].value.get(0, target);
                    let g = go.scalar_value();
                    let mut dp = Tensor::zeros(1, self.nodes[probs].value.cols());
                    // Zero in the clamped region, matching the finite
                    // differences of the clamped loss.
                    if p > CE_PROB_FLOOR {
                        dp.set(0, target, -g / p);
                    }
                    deltas.push((probs, dp));
                }
            }
            Op::Dropout { x, mask } => {
                if self.needs(*x) {
                    let dx = Tensor::from_vec(
                        go.rows(),
                        go.cols(),
                        go.data().iter().zip(mask).map(|(g, m)| g * m).collect(),
                    );
                    deltas.push((*x, dx));
                }
            }
            Op::Aggregate { h, plan } => {
                if self.needs(*h) {
                    let d = go.cols();
                    let mut dh = Tensor::zeros(plan.n, d);
                    for v in 0..plan.n {
                        for &(u, w) in &plan.outgoing[v] {
                            for c in 0..d {
                                let val = dh.get(v, c) + w * go.get(u, c);
                                dh.set(v, c, val);
                            }
                        }
                    }
                    deltas.push((*h, dh));
                }
            }
        }
        for (target, delta) in deltas {
            self.accumulate(target, &delta);
        }
    }

    /// Gradients of every registered parameter, in name order; zeros for
    /// parameters the loss does not reach.
    pub fn param_gradients(&self) -> std::collections::BTreeMap<String, Tensor> {
        let mut out = std::collections::BTreeMap::new();
        for (name, id) in &self.params {
            let node = &self.nodes[*id];
            let g = node
                .grad
                .clone()
                .unwrap_or_else(|| Tensor::zeros(node.value.rows(), node.value.cols()));
            out.insert(name.clone(), g);
        }
        out
    }

    pub fn param_names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|(n, _)| n.as_str())
    }
}

fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Build a scalar loss under `build`, run backward, and return the loss value
/// with all parameter gradients.
pub fn grad_of<F>(build: F) -> Result<(f64, std::collections::BTreeMap<String, Tensor>)>
where
    F: FnOnce(&mut Graph) -> Result<TensorId>,
{
    let mut g = Graph::new();
    let loss = build(&mut g)?;
    g.backward(loss)?;
    Ok((g.value(loss).scalar_value(), g.param_gradients()))
}
