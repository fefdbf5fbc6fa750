//! Wengert tape over dense tensors.
//!
//! Every operation appends a node holding its forward value and enough
//! information to run its local backward rule. [`Tape::backward`] walks the
//! nodes once in reverse recording order and accumulates adjoints into every
//! node that requires a gradient.

use std::sync::Arc;

use super::tensor::{matmul_nt, matmul_raw, matmul_tn};
use super::{AutodiffError, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Hadamard(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Neg(Var),
    Sigmoid(Var),
    Relu(Var),
    Log(Var),
    Powf(Var, f64),
    Clamp(Var, f64, f64),
    Sum(Var),
    Mean(Var),
    ConcatRows(Var, Var),
    Slice(Var, usize),
    Gather(Var, Arc<[usize]>),
    SegmentSum(Var, Arc<[usize]>),
    ScatterAggregate {
        weights: Var,
        src: Var,
        edges: Arc<[(usize, usize)]>,
    },
    RowScale(Var, Var),
    ColScale(Var, Var),
    AddRowVector(Var, Var),
    SoftmaxCrossEntropy {
        logits: Var,
        targets: Arc<Tensor>,
        mask: Arc<[usize]>,
        probs: Vec<f64>,
    },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Reverse-mode tape. Build the forward pass with the recording methods, then
/// call [`backward`](Tape::backward) on a scalar and read [`grad`](Tape::grad).
#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> AutodiffError {
    AutodiffError::ShapeMismatch {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
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

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records a trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Gradient of the last backward root w.r.t. `v`, if `v` requires one.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let src = &self.nodes[a.0].value;
        let data = src.data().iter().map(|&x| f(x)).collect();
        let value = Tensor::new(src.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(a);
        self.push(value, op, rg)
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var, AutodiffError> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.shape() != tb.shape() {
            return Err(shape_err(name, ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, op, rg))
    }

    /// Matrix product. A vector right operand of length k is treated as k×1
    /// and yields a vector of length n.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if !ta.is_matrix() {
            return Err(shape_err("matmul", ta, tb));
        }
        let (n, k) = (ta.shape()[0], ta.shape()[1]);
        let (kb, m) = if tb.is_matrix() {
            (tb.shape()[0], tb.shape()[1])
        } else {
            (tb.len(), 1)
        };
        if k != kb {
            return Err(shape_err("matmul", ta, tb));
        }
        let data = matmul_raw(ta.data(), tb.data(), n, k, m);
        let shape = if tb.is_matrix() { vec![n, m] } else { vec![n] };
        let value = Tensor::new(shape, data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.binary("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.binary("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.binary("hadamard", a, b, Op::Hadamard(a, b), |x, y| x * y)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        self.unary(a, Op::Scale(a, factor), |x| x * factor)
    }

    pub fn add_scalar(&mut self, a: Var, offset: f64) -> Var {
        self.unary(a, Op::AddScalar(a), |x| x + offset)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(a, Op::Neg(a), |x| -x)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), stable_sigmoid)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| if x < 0.0 { 0.0 } else { x })
    }

    /// Natural log; every input must be strictly positive.
    pub fn log(&mut self, a: Var) -> Result<Var, AutodiffError> {
        if let Some(&bad) = self.nodes[a.0].value.data().iter().find(|&&x| !(x > 0.0)) {
            return Err(AutodiffError::Domain { op: "log", value: bad });
        }
        Ok(self.unary(a, Op::Log(a), f64::ln))
    }

    pub fn powf(&mut self, a: Var, exponent: f64) -> Result<Var, AutodiffError> {
        let out = self.unary(a, Op::Powf(a, exponent), |x| x.powf(exponent));
        if let Some(i) = self.nodes[out.0].value.data().iter().position(|x| !x.is_finite()) {
            let bad = self.nodes[a.0].value.data()[i];
            self.nodes.pop();
            return Err(AutodiffError::Domain { op: "powf", value: bad });
        }
        Ok(out)
    }

    /// Clamps into `[lo, hi]`; the gradient is zero outside the interval.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, Op::Clamp(a, lo, hi), |x| x.clamp(lo, hi))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.nodes[a.0].value.data().iter().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    /// Mean over all entries. The mean of an empty tensor is 0.
    pub fn mean(&mut self, a: Var) -> Var {
        let t = &self.nodes[a.0].value;
        let m = if t.is_empty() {
            0.0
        } else {
            t.data().iter().sum::<f64>() / t.len() as f64
        };
        let rg = self.rg(a);
        self.push(Tensor::scalar(m), Op::Mean(a), rg)
    }

    /// `[a || b]` for two vectors of equal length.
    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.is_matrix() || tb.is_matrix() || ta.len() != tb.len() {
            return Err(shape_err("concat_rows", ta, tb));
        }
        let mut data = ta.data().to_vec();
        data.extend_from_slice(tb.data());
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::vector(data), Op::ConcatRows(a, b), rg))
    }

    /// Contiguous sub-range `[start, end)` of a vector.
    pub fn slice(&mut self, a: Var, start: usize, end: usize) -> Result<Var, AutodiffError> {
        let t = &self.nodes[a.0].value;
        if t.is_matrix() || start > end || end > t.len() {
            return Err(AutodiffError::IndexOutOfRange {
                op: "slice",
                index: end,
                bound: t.len(),
            });
        }
        let value = Tensor::vector(t.data()[start..end].to_vec());
        let rg = self.rg(a);
        Ok(self.push(value, Op::Slice(a, start), rg))
    }

    /// Selects entries of a vector (or rows of a matrix) by index.
    pub fn gather(&mut self, a: Var, index: Arc<[usize]>) -> Result<Var, AutodiffError> {
        let t = &self.nodes[a.0].value;
        let (rows, cols) = (t.rows_for_indexing(), t.row_width());
        if let Some(&bad) = index.iter().find(|&&i| i >= rows) {
            return Err(AutodiffError::IndexOutOfRange {
                op: "gather",
                index: bad,
                bound: rows,
            });
        }
        let mut data = Vec::with_capacity(index.len() * cols);
        for &i in index.iter() {
            data.extend_from_slice(&t.data()[i * cols..(i + 1) * cols]);
        }
        let shape = if t.is_matrix() {
            vec![index.len(), cols]
        } else {
            vec![index.len()]
        };
        let value = Tensor::new(shape, data)?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::Gather(a, index), rg))
    }

    /// `out[index[i]] += a[i]` into `num_segments` rows.
    pub fn segment_sum(
        &mut self,
        a: Var,
        index: Arc<[usize]>,
        num_segments: usize,
    ) -> Result<Var, AutodiffError> {
        let t = &self.nodes[a.0].value;
        let cols = t.row_width();
        if index.len() != t.rows_for_indexing() {
            return Err(AutodiffError::Precondition(format!(
                "segment_sum: {} indices for {} rows",
                index.len(),
                t.rows_for_indexing()
            )));
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= num_segments) {
            return Err(AutodiffError::IndexOutOfRange {
                op: "segment_sum",
                index: bad,
                bound: num_segments,
            });
        }
        let mut data = vec![0.0; num_segments * cols];
        for (row, &seg) in index.iter().enumerate() {
            for c in 0..cols {
                data[seg * cols + c] += t.data()[row * cols + c];
            }
        }
        let shape = if t.is_matrix() {
            vec![num_segments, cols]
        } else {
            vec![num_segments]
        };
        let value = Tensor::new(shape, data)?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::SegmentSum(a, index), rg))
    }

    /// Weighted message passing: `out[v] = Σ_{(u→v)} w_{u→v} · src[u]`.
    pub fn scatter_aggregate(
        &mut self,
        weights: Var,
        src: Var,
        edges: Arc<[(usize, usize)]>,
    ) -> Result<Var, AutodiffError> {
        let (tw, ts) = (&self.nodes[weights.0].value, &self.nodes[src.0].value);
        if tw.is_matrix() || tw.len() != edges.len() || !ts.is_matrix() {
            return Err(shape_err("scatter_aggregate", tw, ts));
        }
        let (n, h) = (ts.shape()[0], ts.shape()[1]);
        if let Some(&(u, v)) = edges.iter().find(|&&(u, v)| u >= n || v >= n) {
            return Err(AutodiffError::IndexOutOfRange {
                op: "scatter_aggregate",
                index: u.max(v),
                bound: n,
            });
        }
        let mut data = vec![0.0; n * h];
        for (e, &(u, v)) in edges.iter().enumerate() {
            let w = tw.data()[e];
            if w == 0.0 {
                continue;
            }
            let src_row = &ts.data()[u * h..(u + 1) * h];
            for (o, s) in data[v * h..(v + 1) * h].iter_mut().zip(src_row) {
                *o += w * s;
            }
        }
        let value = Tensor::matrix(n, h, data)?;
        let rg = self.rg(weights) || self.rg(src);
        Ok(self.push(value, Op::ScatterAggregate { weights, src, edges }, rg))
    }

    /// `out[i, :] = scale[i] · m[i, :]`.
    pub fn row_scale(&mut self, m: Var, scale: Var) -> Result<Var, AutodiffError> {
        let (tm, tv) = (&self.nodes[m.0].value, &self.nodes[scale.0].value);
        if !tm.is_matrix() || tv.is_matrix() || tv.len() != tm.rows() {
            return Err(shape_err("row_scale", tm, tv));
        }
        let cols = tm.cols();
        let data = tm
            .data()
            .iter()
            .enumerate()
            .map(|(i, x)| x * tv.data()[i / cols])
            .collect();
        let value = Tensor::new(tm.shape().to_vec(), data)?;
        let rg = self.rg(m) || self.rg(scale);
        Ok(self.push(value, Op::RowScale(m, scale), rg))
    }

    /// `out[:, j] = m[:, j] · scale[j]`, a Hadamard product with a row-broadcast vector.
    pub fn col_scale(&mut self, m: Var, scale: Var) -> Result<Var, AutodiffError> {
        let (tm, tv) = (&self.nodes[m.0].value, &self.nodes[scale.0].value);
        if !tm.is_matrix() || tv.is_matrix() || tv.len() != tm.cols() {
            return Err(shape_err("col_scale", tm, tv));
        }
        let cols = tm.cols();
        let data = tm
            .data()
            .iter()
            .enumerate()
            .map(|(i, x)| x * tv.data()[i % cols])
            .collect();
        let value = Tensor::new(tm.shape().to_vec(), data)?;
        let rg = self.rg(m) || self.rg(scale);
        Ok(self.push(value, Op::ColScale(m, scale), rg))
    }

    /// Adds a row vector to every row of `m`.
    pub fn add_row_vector(&mut self, m: Var, v: Var) -> Result<Var, AutodiffError> {
        let (tm, tv) = (&self.nodes[m.0].value, &self.nodes[v.0].value);
        if !tm.is_matrix() || tv.is_matrix() || tv.len() != tm.cols() {
            return Err(shape_err("add_row_vector", tm, tv));
        }
        let cols = tm.cols();
        let data = tm
            .data()
            .iter()
            .enumerate()
            .map(|(i, x)| x + tv.data()[i % cols])
            .collect();
        let value = Tensor::new(tm.shape().to_vec(), data)?;
        let rg = self.rg(m) || self.rg(v);
        Ok(self.push(value, Op::AddRowVector(m, v), rg))
    }

    /// Mean over `mask` rows of `-Σ_c y_c log softmax(logits)_c`.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: Var,
        targets: Arc<Tensor>,
        mask: Arc<[usize]>,
    ) -> Result<Var, AutodiffError> {
        let tl = &self.nodes[logits.0].value;
        if !tl.is_matrix() || tl.shape() != targets.shape() {
            return Err(shape_err("softmax_cross_entropy", tl, &targets));
        }
        let (n, c) = (tl.shape()[0], tl.shape()[1]);
        if c < 2 {
            return Err(AutodiffError::Precondition(
                "softmax_cross_entropy needs at least 2 classes".into(),
            ));
        }
        if mask.is_empty() {
            return Err(AutodiffError::Precondition(
                "softmax_cross_entropy over an empty mask".into(),
            ));
        }
        let mut probs = vec![0.0; mask.len() * c];
        let mut loss = 0.0;
        for (k, &i) in mask.iter().enumerate() {
            if i >= n {
                return Err(AutodiffError::IndexOutOfRange {
                    op: "softmax_cross_entropy",
                    index: i,
                    bound: n,
                });
            }
            let y = targets.row(i);
            let total: f64 = y.iter().sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(AutodiffError::Precondition(format!(
                    "target row {i} sums to {total}, expected 1"
                )));
            }
            let row = tl.row(i);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let log_sum = row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            for j in 0..c {
                let log_p = (row[j] - max) - log_sum;
                probs[k * c + j] = log_p.exp();
                if y[j] != 0.0 {
                    loss -= y[j] * log_p;
                }
            }
        }
        loss /= mask.len() as f64;
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy {
                logits,
                targets,
                mask,
                probs,
            },
            rg,
        ))
    }

    /// Runs the reverse sweep from a scalar root, replacing any gradients from
    /// an earlier call.
    pub fn backward(&mut self, root: Var) -> Result<(), AutodiffError> {
        if self.nodes[root.0].value.len() != 1 {
            return Err(AutodiffError::NotScalar(
                self.nodes[root.0].value.shape().to_vec(),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if self.nodes[root.0].requires_grad {
            grads[root.0] = Some(vec![1.0]);
        }
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], v: Var, contrib: Vec<f64>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => {
                for (e, c) in existing.iter_mut().zip(contrib) {
                    *e += c;
                }
            }
            slot @ None => *slot = Some(contrib),
        }
    }

    fn val(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.val(*a), self.val(*b));
                let (n, k) = (ta.shape()[0], ta.shape()[1]);
                let m = if tb.is_matrix() { tb.shape()[1] } else { 1 };
                if self.rg(*a) {
                    self.accumulate(grads, *a, matmul_nt(g, tb.data(), n, k, m));
                }
                if self.rg(*b) {
                    self.accumulate(grads, *b, matmul_tn(ta.data(), g, n, k, m));
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.to_vec());
                self.accumulate(grads, *b, g.to_vec());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.to_vec());
                self.accumulate(grads, *b, g.iter().map(|x| -x).collect());
            }
            Op::Hadamard(a, b) => {
                let (ta, tb) = (self.val(*a), self.val(*b));
                if self.rg(*a) {
                    self.accumulate(grads, *a, mul(g, tb.data()));
                }
                if self.rg(*b) {
                    self.accumulate(grads, *b, mul(g, ta.data()));
                }
            }
            Op::Scale(a, f) => self.accumulate(grads, *a, g.iter().map(|x| x * f).collect()),
            Op::AddScalar(a) => self.accumulate(grads, *a, g.to_vec()),
            Op::Neg(a) => self.accumulate(grads, *a, g.iter().map(|x| -x).collect()),
            Op::Sigmoid(a) => {
                let d = g.iter().zip(out).map(|(g, s)| g * s * (1.0 - s)).collect();
                self.accumulate(grads, *a, d);
            }
            Op::Relu(a) => {
                let x = self.val(*a).data();
                let d = g
                    .iter()
                    .zip(x)
                    .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                    .collect();
                self.accumulate(grads, *a, d);
            }
            Op::Log(a) => {
                let x = self.val(*a).data();
                self.accumulate(grads, *a, g.iter().zip(x).map(|(g, x)| g / x).collect());
            }
            Op::Powf(a, p) => {
                let x = self.val(*a).data();
                let d = g
                    .iter()
                    .zip(x)
                    .map(|(g, x)| g * p * x.powf(p - 1.0))
                    .collect();
                self.accumulate(grads, *a, d);
            }
            Op::Clamp(a, lo, hi) => {
                let x = self.val(*a).data();
                let d = g
                    .iter()
                    .zip(x)
                    .map(|(g, x)| if *x >= *lo && *x <= *hi { *g } else { 0.0 })
                    .collect();
                self.accumulate(grads, *a, d);
            }
            Op::Sum(a) => {
                let n = self.val(*a).len();
                self.accumulate(grads, *a, vec![g[0]; n]);
            }
            Op::Mean(a) => {
                let n = self.val(*a).len();
                if n > 0 {
                    self.accumulate(grads, *a, vec![g[0] / n as f64; n]);
                }
            }
            Op::ConcatRows(a, b) => {
                let d = self.val(*a).len();
                self.accumulate(grads, *a, g[..d].to_vec());
                self.accumulate(grads, *b, g[d..].to_vec());
            }
            Op::Slice(a, start) => {
                let mut d = vec![0.0; self.val(*a).len()];
                d[*start..*start + g.len()].copy_from_slice(g);
                self.accumulate(grads, *a, d);
            }
            Op::Gather(a, index) => {
                let ta = self.val(*a);
                let cols = ta.row_width();
                let mut d = vec![0.0; ta.len()];
                for (row, &src) in index.iter().enumerate() {
                    for c in 0..cols {
                        d[src * cols + c] += g[row * cols + c];
                    }
                }
                self.accumulate(grads, *a, d);
            }
            Op::SegmentSum(a, index) => {
                let cols = node.value.row_width();
                let mut d = Vec::with_capacity(index.len() * cols);
                for &seg in index.iter() {
                    d.extend_from_slice(&g[seg * cols..(seg + 1) * cols]);
                }
                self.accumulate(grads, *a, d);
            }
            Op::ScatterAggregate {
                weights,
                src,
                edges,
            } => {
                let (tw, ts) = (self.val(*weights), self.val(*src));
                let h = ts.cols();
                if self.rg(*weights) {
                    let d = edges
                        .iter()
                        .map(|&(u, v)| {
                            let gv = &g[v * h..(v + 1) * h];
                            let su = &ts.data()[u * h..(u + 1) * h];
                            gv.iter().zip(su).map(|(a, b)| a * b).sum()
                        })
                        .collect();
                    self.accumulate(grads, *weights, d);
                }
                if self.rg(*src) {
                    let mut d = vec![0.0; ts.len()];
                    for (e, &(u, v)) in edges.iter().enumerate() {
                        let w = tw.data()[e];
                        for c in 0..h {
                            d[u * h + c] += w * g[v * h + c];
                        }
                    }
                    self.accumulate(grads, *src, d);
                }
            }
            Op::RowScale(m, s) => {
                let (tm, ts) = (self.val(*m), self.val(*s));
                let cols = tm.cols();
                if self.rg(*m) {
                    let d = g
                        .iter()
                        .enumerate()
                        .map(|(i, g)| g * ts.data()[i / cols])
                        .collect();
                    self.accumulate(grads, *m, d);
                }
                if self.rg(*s) {
                    let mut d = vec![0.0; ts.len()];
                    for (i, (g, x)) in g.iter().zip(tm.data()).enumerate() {
                        d[i / cols] += g * x;
                    }
                    self.accumulate(grads, *s, d);
                }
            }
            Op::ColScale(m, s) => {
                let (tm, ts) = (self.val(*m), self.val(*s));
                let cols = tm.cols();
                if self.rg(*m) {
                    let d = g
                        .iter()
                        .enumerate()
                        .map(|(i, g)| g * ts.data()[i % cols])
                        .collect();
                    self.accumulate(grads, *m, d);
                }
                if self.rg(*s) {
                    let mut d = vec![0.0; cols];
                    for (i, (g, x)) in g.iter().zip(tm.data()).enumerate() {
                        d[i % cols] += g * x;
                    }
                    self.accumulate(grads, *s, d);
                }
            }
            Op::AddRowVector(m, v) => {
                let cols = self.val(*m).cols();
                self.accumulate(grads, *m, g.to_vec());
                if self.rg(*v) {
                    let mut d = vec![0.0; cols];
                    for (i, g) in g.iter().enumerate() {
                        d[i % cols] += g;
                    }
                    self.accumulate(grads, *v, d);
                }
            }
            Op::SoftmaxCrossEntropy {
                logits,
                targets,
                mask,
                probs,
            } => {
                let tl = self.val(*logits);
                let c = tl.cols();
                let mut d = vec![0.0; tl.len()];
                let scale = g[0] / mask.len() as f64;
                for (k, &row) in mask.iter().enumerate() {
                    let y = targets.row(row);
                    for j in 0..c {
                        d[row * c + j] += scale * (probs[k * c + j] - y[j]);
                    }
                }
                self.accumulate(grads, *logits, d);
            }
        }
    }
}

fn mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x * y).collect()
}

impl Tensor {
    /// Number of addressable rows: entries for a vector, rows for a matrix.
    fn rows_for_indexing(&self) -> usize {
        if self.is_matrix() {
            self.shape()[0]
        } else {
            self.len()
        }
    }

    fn row_width(&self) -> usize {
        if self.is_matrix() {
            self.shape()[1]
        } else {
            1
        }
    }
}
