//! Reverse-mode automatic differentiation over a flat tape.
//!
//! Nodes are appended in evaluation order, so every parent index is smaller
//! than its child's. A reverse sweep from the root is therefore a valid
//! topological order and touches each reachable node once.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::tensor::{matmul_nt, matmul_tn, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Index lists in compressed form: segment `s` covers
/// `indices[offsets[s]..offsets[s + 1]]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segments {
    offsets: Vec<usize>,
    indices: Vec<usize>,
}

impl Segments {
    pub fn from_lists<L: AsRef<[usize]>>(lists: &[L]) -> Self {
        let mut offsets = Vec::with_capacity(lists.len() + 1);
        let mut indices = Vec::new();
        offsets.push(0);
        for l in lists {
            indices.extend_from_slice(l.as_ref());
            offsets.push(indices.len());
        }
        Self { offsets, indices }
    }

    /// Segments where segment `s` holds the contiguous range
    /// `bounds[s]..bounds[s + 1]`.
    pub fn contiguous(bounds: Vec<usize>) -> Self {
        let total = bounds.last().copied().unwrap_or(0);
        Self {
            offsets: if bounds.is_empty() { vec![0] } else { bounds },
            indices: (0..total).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn segment(&self, s: usize) -> &[usize] {
        &self.indices[self.offsets[s]..self.offsets[s + 1]]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[usize]> + '_ {
        (0..self.len()).map(move |s| self.segment(s))
    }

    fn check_range(&self, n: usize) -> Result<()> {
        match self.indices.iter().find(|&&i| i >= n) {
            Some(&index) => Err(Error::Index {
                what: "segment source rows",
                index,
                len: n,
            }),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Sqrt(Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    Scale(Var, f64),
    AddScalar(Var),
    Clamp(Var, f64, f64),
    ConcatCols(Var, Var),
    ConcatRows(Vec<Var>),
    GatherRows(Var, Arc<[usize]>),
    RepeatRows(Var),
    ColMean(Var),
    RowSum(Var),
    ScaleRows(Var, Var),
    Sum(Var),
    SegmentSum(Var, Arc<Segments>),
    SegmentMean(Var, Arc<Segments>),
    SegmentSoftmax(Var, Arc<Segments>),
    L2NormalizeRows(Var),
    BceWithLogits(Var, Arc<[f64]>),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Tensor>,
}

/// Counters reported by [`Tape::backward`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BackwardStats {
    /// Nodes that received a gradient during the sweep.
    pub visited: usize,
}

/// A computation graph under construction.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    /// Constant input; never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> Result<f64> {
        self.value(v).item()
    }

    /// Accumulated gradient, zero-filled when no backward pass reached `v`.
    pub fn grad(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        n.grad
            .clone()
            .unwrap_or_else(|| Tensor::zeros(n.value.shape()))
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn zero_grads(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    /// Indices of nodes reachable from `root` through parent links.
    pub fn reachable(&self, root: Var) -> Vec<usize> {
        let mut seen = vec![false; root.0 + 1];
        let mut stack = vec![root.0];
        seen[root.0] = true;
        while let Some(i) = stack.pop() {
            for p in parents(&self.nodes[i].op) {
                if !seen[p.0] {
                    seen[p.0] = true;
                    stack.push(p.0);
                }
            }
        }
        (0..=root.0).filter(|&i| seen[i]).collect()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn derived(&mut self, value: Tensor, op: Op) -> Var {
        let rg = parents(&op).iter().any(|p| self.nodes[p.0].requires_grad);
        self.push(value, op, rg)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::dim(op, sa, sb));
        }
        Ok(())
    }

    // ---- linear algebra -------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.derived(v, Op::MatMul(a, b)))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, p) = ta.dims2()?;
        let (m2, q) = tb.dims2()?;
        if m != m2 {
            return Err(Error::dim("concat_cols", ta.shape(), tb.shape()));
        }
        let mut out = Vec::with_capacity(m * (p + q));
        for i in 0..m {
            out.extend_from_slice(ta.row(i));
            out.extend_from_slice(tb.row(i));
        }
        let v = Tensor::raw(vec![m, p + q], out);
        Ok(self.derived(v, Op::ConcatCols(a, b)))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::contract("concat_rows of nothing"))?;
        let (_, d) = self.value(*first).dims2()?;
        let mut out = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            let (r, c) = t.dims2()?;
            if c != d {
                return Err(Error::dim("concat_rows", self.value(*first).shape(), t.shape()));
            }
            rows += r;
            out.extend_from_slice(t.data());
        }
        let v = Tensor::raw(vec![rows, d], out);
        Ok(self.derived(v, Op::ConcatRows(parts.to_vec())))
    }

    /// Row `r` of the output is row `indices[r]` of `a`.
    pub fn gather_rows(&mut self, a: Var, indices: Arc<[usize]>) -> Result<Var> {
        let t = self.value(a);
        let (n, d) = t.dims2()?;
        let mut out = Vec::with_capacity(indices.len() * d);
        for &i in indices.iter() {
            if i >= n {
                return Err(Error::Index {
                    what: "gather_rows source",
                    index: i,
                    len: n,
                });
            }
            out.extend_from_slice(t.row(i));
        }
        let v = Tensor::raw(vec![indices.len(), d], out);
        Ok(self.derived(v, Op::GatherRows(a, indices)))
    }

    /// Stack a `[1×d]` row `n` times.
    pub fn repeat_rows(&mut self, row: Var, n: usize) -> Result<Var> {
        let t = self.value(row);
        let (r, d) = t.dims2()?;
        if r != 1 {
            return Err(Error::dim("repeat_rows", t.shape(), &[1, d]));
        }
        let mut out = Vec::with_capacity(n * d);
        for _ in 0..n {
            out.extend_from_slice(t.data());
        }
        let v = Tensor::raw(vec![n, d], out);
        Ok(self.derived(v, Op::RepeatRows(row)))
    }

    /// `x + bias` with `bias` a `[1×d]` row added to every row of `x`.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let n = self.value(x).dims2()?.0;
        let rep = self.repeat_rows(bias, n)?;
        self.add(x, rep)
    }

    pub fn col_mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let (n, d) = t.dims2()?;
        if n == 0 {
            return Err(Error::contract("col_mean over zero rows"));
        }
        let mut out = vec![0.0; d];
        for i in 0..n {
            for (o, v) in out.iter_mut().zip(t.row(i)) {
                *o += v;
            }
        }
        for o in &mut out {
            *o /= n as f64;
        }
        let v = Tensor::raw(vec![1, d], out);
        Ok(self.derived(v, Op::ColMean(a)))
    }

    pub fn row_sum(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let (n, _) = t.dims2()?;
        let out = (0..n).map(|i| t.row(i).iter().sum()).collect();
        let v = Tensor::raw(vec![n, 1], out);
        Ok(self.derived(v, Op::RowSum(a)))
    }

    /// Multiply row `i` of `x` by the scalar `w[i]`, `w` being `[n×1]`.
    pub fn scale_rows(&mut self, x: Var, w: Var) -> Result<Var> {
        let (tx, tw) = (self.value(x), self.value(w));
        let (n, d) = tx.dims2()?;
        if tw.shape() != [n, 1] {
            return Err(Error::dim("scale_rows", tx.shape(), tw.shape()));
        }
        let mut out = Vec::with_capacity(n * d);
        for i in 0..n {
            let s = tw.data()[i];
            out.extend(tx.row(i).iter().map(|v| v * s));
        }
        let v = Tensor::raw(vec![n, d], out);
        Ok(self.derived(v, Op::ScaleRows(x, w)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.derived(Tensor::scalar(s), Op::Sum(a))
    }

    // ---- elementwise ----------------------------------------------------

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = self.value(a).zip(self.value(b), |x, y| x + y);
        Ok(self.derived(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let v = self.value(a).zip(self.value(b), |x, y| x - y);
        Ok(self.derived(v, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let v = self.value(a).zip(self.value(b), |x, y| x * y);
        Ok(self.derived(v, Op::Mul(a, b)))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("div", a, b)?;
        if self.value(b).data().contains(&0.0) {
            return Err(Error::Domain {
                op: "div",
                detail: "division by zero".into(),
            });
        }
        let v = self.value(a).zip(self.value(b), |x, y| x / y);
        Ok(self.derived(v, Op::Div(a, b)))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(math::sigmoid);
        self.derived(v, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(math::exp);
        self.derived(v, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if let Some(bad) = t.data().iter().find(|&&x| x <= 0.0) {
            return Err(Error::Domain {
                op: "log",
                detail: format!("log of non-positive value {bad}"),
            });
        }
        let v = t.map(math::ln);
        Ok(self.derived(v, Op::Log(a)))
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if let Some(bad) = t.data().iter().find(|&&x| x < 0.0) {
            return Err(Error::Domain {
                op: "sqrt",
                detail: format!("sqrt of negative value {bad}"),
            });
        }
        let v = t.map(math::sqrt);
        Ok(self.derived(v, Op::Sqrt(a)))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        self.derived(v, Op::Relu(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let v = self.value(a).map(|x| if x >= 0.0 { x } else { slope * x });
        self.derived(v, Op::LeakyRelu(a, slope))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| c * x);
        self.derived(v, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x + c);
        self.derived(v, Op::AddScalar(a))
    }

    /// Gradient passes where `lo <= x <= hi`, zero outside.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let v = self.value(a).map(|x| x.clamp(lo, hi));
        self.derived(v, Op::Clamp(a, lo, hi))
    }

    /// Scales each row to unit L2 norm; all-zero rows stay zero.
    pub fn l2_normalize_rows(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let (n, d) = t.dims2()?;
        let mut out = Vec::with_capacity(n * d);
        for i in 0..n {
            let r = t.row(i);
            let norm = math::sqrt(r.iter().map(|x| x * x).sum());
            if norm > 0.0 {
                out.extend(r.iter().map(|x| x / norm));
            } else {
                out.extend(core::iter::repeat_n(0.0, d));
            }
        }
        let v = Tensor::raw(vec![n, d], out);
        Ok(self.derived(v, Op::L2NormalizeRows(a)))
    }

    // ---- segment reductions --------------------------------------------

    pub fn segment_sum(&mut self, x: Var, segments: Arc<Segments>) -> Result<Var> {
        let v = self.segment_reduce(x, &segments, false)?;
        Ok(self.derived(v, Op::SegmentSum(x, segments)))
    }

    /// Mean per segment; empty segments produce zero rows.
    pub fn segment_mean(&mut self, x: Var, segments: Arc<Segments>) -> Result<Var> {
        let v = self.segment_reduce(x, &segments, true)?;
        Ok(self.derived(v, Op::SegmentMean(x, segments)))
    }

    fn segment_reduce(&self, x: Var, segments: &Segments, mean: bool) -> Result<Tensor> {
        let t = self.value(x);
        let (n, d) = t.dims2()?;
        segments.check_range(n)?;
        let mut out = vec![0.0; segments.len() * d];
        for (s, idx) in segments.iter().enumerate() {
            let o = &mut out[s * d..(s + 1) * d];
            for &j in idx {
                for (a, b) in o.iter_mut().zip(t.row(j)) {
                    *a += b;
                }
            }
            if mean && !idx.is_empty() {
                let k = idx.len() as f64;
                o.iter_mut().for_each(|a| *a /= k);
            }
        }
        Ok(Tensor::raw(vec![segments.len(), d], out))
    }

    /// Softmax of an `[E×1]` score column within each segment.
    ///
    /// Every row must belong to exactly one segment.
    pub fn segment_softmax(&mut self, scores: Var, segments: Arc<Segments>) -> Result<Var> {
        let t = self.value(scores);
        let (e, c) = t.dims2()?;
        if c != 1 {
            return Err(Error::dim("segment_softmax", t.shape(), &[e, 1]));
        }
        segments.check_range(e)?;
        let mut seen = vec![false; e];
        for &i in &segments.indices {
            if core::mem::replace(&mut seen[i], true) {
                return Err(Error::contract(format!(
                    "segment_softmax: row {i} appears in more than one segment"
                )));
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(Error::contract(format!(
                "segment_softmax: row {i} belongs to no segment"
            )));
        }
        let x = t.data();
        let mut out = vec![0.0; e];
        for idx in segments.iter() {
            let max = idx.iter().map(|&i| x[i]).fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for &i in idx {
                out[i] = math::exp(x[i] - max);
                z += out[i];
            }
            for &i in idx {
                out[i] /= z;
            }
        }
        let v = Tensor::raw(vec![e, 1], out);
        Ok(self.derived(v, Op::SegmentSoftmax(scores, segments)))
    }

    // ---- losses -----------------------------------------------------------

    /// Mean binary cross-entropy of `sigmoid(logits)` against `labels`,
    /// evaluated as `max(z,0) - z*y + ln(1 + exp(-|z|))`.
    pub fn bce_with_logits(&mut self, logits: Var, labels: Arc<[f64]>) -> Result<Var> {
        let t = self.value(logits);
        if t.len() != labels.len() {
            return Err(Error::dim("bce_with_logits", t.shape(), &[labels.len()]));
        }
        if t.is_empty() {
            return Err(Error::contract("cross-entropy over an empty batch"));
        }
        if let Some(bad) = labels.iter().find(|&&y| !(0.0..=1.0).contains(&y)) {
            return Err(Error::Domain {
                op: "bce_with_logits",
                detail: format!("label {bad} outside [0, 1]"),
            });
        }
        let total: f64 = t
            .data()
            .iter()
            .zip(labels.iter())
            .map(|(&z, &y)| bce_term(z, y))
            .sum();
        let v = Tensor::scalar(total / t.len() as f64);
        Ok(self.derived(v, Op::BceWithLogits(logits, labels)))
    }

    // ---- backward -------------------------------------------------------

    /// Accumulate `d root / d node` into every gradient-carrying node.
    ///
    /// Gradients add onto whatever earlier passes left; call
    /// [`Tape::zero_grads`] to reset.
    pub fn backward(&mut self, root: Var) -> Result<BackwardStats> {
        if self.value(root).len() != 1 {
            return Err(Error::contract(format!(
                "backward from non-scalar root of shape {:?}",
                self.value(root).shape()
            )));
        }
        let mut local: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        local[root.0] = Some(Tensor::full(self.value(root).shape(), 1.0));
        let mut visited = 0;
        for i in (0..=root.0).rev() {
            let Some(g) = local[i].take() else { continue };
            visited += 1;
            if self.nodes[i].requires_grad {
                self.propagate(i, &g, &mut local)?;
                match &mut self.nodes[i].grad {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(BackwardStats { visited })
    }

    fn propagate(&self, i: usize, g: &Tensor, local: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[i];
        let y = &node.value;
        let mut give = |v: Var, contrib: Tensor| {
            if self.nodes[v.0].requires_grad {
                match &mut local[v.0] {
                    Some(acc) => acc.add_assign(&contrib),
                    slot @ None => *slot = Some(contrib),
                }
            }
        };
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = val(*a).dims2()?;
                let n = val(*b).dims2()?.1;
                if self.requires_grad(*a) {
                    let da = matmul_nt(g.data(), val(*b).data(), m, n, k);
                    give(*a, Tensor::raw(vec![m, k], da));
                }
                if self.requires_grad(*b) {
                    let db = matmul_tn(val(*a).data(), g.data(), m, k, n);
                    give(*b, Tensor::raw(vec![k, n], db));
                }
            }
            Op::Add(a, b) => {
                give(*a, g.clone());
                give(*b, g.clone());
            }
            Op::Sub(a, b) => {
                give(*a, g.clone());
                give(*b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                give(*a, g.zip(val(*b), |g, b| g * b));
                give(*b, g.zip(val(*a), |g, a| g * a));
            }
            Op::Div(a, b) => {
                give(*a, g.zip(val(*b), |g, b| g / b));
                let gb = g.zip(val(*a), |g, a| g * a).zip(val(*b), |ga, b| -ga / (b * b));
                give(*b, gb);
            }
            Op::Sigmoid(a) => give(*a, g.zip(y, |g, s| g * s * (1.0 - s))),
            Op::Exp(a) => give(*a, g.zip(y, |g, e| g * e)),
            Op::Log(a) => give(*a, g.zip(val(*a), |g, x| g / x)),
            Op::Sqrt(a) => give(*a, g.zip(y, |g, r| g / (2.0 * r))),
            Op::Relu(a) => give(*a, g.zip(val(*a), |g, x| if x > 0.0 { g } else { 0.0 })),
            Op::LeakyRelu(a, slope) => {
                let s = *slope;
                give(*a, g.zip(val(*a), |g, x| if x >= 0.0 { g } else { s * g }));
            }
            Op::Scale(a, c) => {
                let c = *c;
                give(*a, g.map(|x| c * x));
            }
            Op::AddScalar(a) => give(*a, g.clone()),
            Op::Clamp(a, lo, hi) => {
                let (lo, hi) = (*lo, *hi);
                give(
                    *a,
                    g.zip(val(*a), |g, x| if x >= lo && x <= hi { g } else { 0.0 }),
                );
            }
            Op::ConcatCols(a, b) => {
                let (m, p) = val(*a).dims2()?;
                let q = val(*b).dims2()?.1;
                let mut ga = Vec::with_capacity(m * p);
                let mut gb = Vec::with_capacity(m * q);
                for r in 0..m {
                    let row = g.row(r);
                    ga.extend_from_slice(&row[..p]);
                    gb.extend_from_slice(&row[p..]);
                }
                give(*a, Tensor::raw(vec![m, p], ga));
                give(*b, Tensor::raw(vec![m, q], gb));
            }
            Op::ConcatRows(parts) => {
                let d = g.cols();
                let mut start = 0;
                for &p in parts {
                    let r = val(p).rows();
                    let slice = g.data()[start * d..(start + r) * d].to_vec();
                    give(p, Tensor::raw(vec![r, d], slice));
                    start += r;
                }
            }
            Op::GatherRows(a, idx) => {
                let (n, d) = val(*a).dims2()?;
                let mut ga = vec![0.0; n * d];
                for (r, &src) in idx.iter().enumerate() {
                    for (o, v) in ga[src * d..(src + 1) * d].iter_mut().zip(g.row(r)) {
                        *o += v;
                    }
                }
                give(*a, Tensor::raw(vec![n, d], ga));
            }
            Op::RepeatRows(a) => {
                let d = g.cols();
                let mut ga = vec![0.0; d];
                for r in 0..g.rows() {
                    for (o, v) in ga.iter_mut().zip(g.row(r)) {
                        *o += v;
                    }
                }
                give(*a, Tensor::raw(vec![1, d], ga));
            }
            Op::ColMean(a) => {
                let (n, d) = val(*a).dims2()?;
                let inv = 1.0 / n as f64;
                let mut ga = Vec::with_capacity(n * d);
                for _ in 0..n {
                    ga.extend(g.data().iter().map(|v| v * inv));
                }
                give(*a, Tensor::raw(vec![n, d], ga));
            }
            Op::RowSum(a) => {
                let (n, d) = val(*a).dims2()?;
                let mut ga = Vec::with_capacity(n * d);
                for r in 0..n {
                    ga.extend(core::iter::repeat_n(g.data()[r], d));
                }
                give(*a, Tensor::raw(vec![n, d], ga));
            }
            Op::ScaleRows(x, w) => {
                let (n, d) = val(*x).dims2()?;
                let (tx, tw) = (val(*x), val(*w));
                if self.requires_grad(*x) {
                    let mut gx = Vec::with_capacity(n * d);
                    for r in 0..n {
                        let s = tw.data()[r];
                        gx.extend(g.row(r).iter().map(|v| v * s));
                    }
                    give(*x, Tensor::raw(vec![n, d], gx));
                }
                if self.requires_grad(*w) {
                    let gw = (0..n)
                        .map(|r| g.row(r).iter().zip(tx.row(r)).map(|(a, b)| a * b).sum())
                        .collect();
                    give(*w, Tensor::raw(vec![n, 1], gw));
                }
            }
            Op::Sum(a) => {
                let s = g.data()[0];
                give(*a, Tensor::full(val(*a).shape(), s));
            }
            Op::SegmentSum(x, segs) | Op::SegmentMean(x, segs) => {
                let mean = matches!(node.op, Op::SegmentMean(..));
                let (n, d) = val(*x).dims2()?;
                let mut gx = vec![0.0; n * d];
                for (s, idx) in segs.iter().enumerate() {
                    let k = if mean && !idx.is_empty() {
                        1.0 / idx.len() as f64
                    } else {
                        1.0
                    };
                    for &j in idx {
                        for (o, v) in gx[j * d..(j + 1) * d].iter_mut().zip(g.row(s)) {
                            *o += k * v;
                        }
                    }
                }
                give(*x, Tensor::raw(vec![n, d], gx));
            }
            Op::SegmentSoftmax(x, segs) => {
                let e = y.len();
                let (yd, gd) = (y.data(), g.data());
                let mut gx = vec![0.0; e];
                for idx in segs.iter() {
                    let dot: f64 = idx.iter().map(|&i| yd[i] * gd[i]).sum();
                    for &i in idx {
                        gx[i] = yd[i] * (gd[i] - dot);
                    }
                }
                give(*x, Tensor::raw(vec![e, 1], gx));
            }
            Op::L2NormalizeRows(a) => {
                let ta = val(*a);
                let (n, d) = ta.dims2()?;
                let mut ga = Vec::with_capacity(n * d);
                for r in 0..n {
                    let norm = math::sqrt(ta.row(r).iter().map(|x| x * x).sum());
                    if norm > 0.0 {
                        let yr = y.row(r);
                        let gr = g.row(r);
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        ga.extend(yr.iter().zip(gr).map(|(yv, gv)| (gv - yv * dot) / norm));
                    } else {
                        ga.extend(core::iter::repeat_n(0.0, d));
                    }
                }
                give(*a, Tensor::raw(vec![n, d], ga));
            }
            Op::BceWithLogits(z, labels) => {
                let tz = val(*z);
                let k = g.data()[0] / tz.len() as f64;
                let gz = tz
                    .data()
                    .iter()
                    .zip(labels.iter())
                    .map(|(&z, &y)| k * (math::sigmoid(z) - y))
                    .collect();
                give(*z, Tensor::raw(tz.shape().to_vec(), gz));
            }
        }
        Ok(())
    }
}

pub(crate) fn bce_term(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + math::ln_1p(math::exp(-z.abs()))
}

fn parents(op: &Op) -> Vec<Var> {
    match op {
        Op::Leaf => Vec::new(),
        Op::MatMul(a, b)
        | Op::Add(a, b)
        | Op::Sub(a, b)
        | Op::Mul(a, b)
        | Op::Div(a, b)
        | Op::ConcatCols(a, b)
        | Op::ScaleRows(a, b) => vec![*a, *b],
        Op::ConcatRows(p) => p.clone(),
        Op::Sigmoid(a)
        | Op::Exp(a)
        | Op::Log(a)
        | Op::Sqrt(a)
        | Op::Relu(a)
        | Op::LeakyRelu(a, _)
        | Op::Scale(a, _)
        | Op::AddScalar(a)
        | Op::Clamp(a, _, _)
        | Op::GatherRows(a, _)
        | Op::RepeatRows(a)
        | Op::ColMean(a)
        | Op::RowSum(a)
        | Op::Sum(a)
        | Op::SegmentSum(a, _)
        | Op::SegmentMean(a, _)
        | Op::SegmentSoftmax(a, _)
        | Op::L2NormalizeRows(a)
        | Op::BceWithLogits(a, _) => vec![*a],
    }
}
