//! Tape-based reverse-mode differentiation.
//!
//! Every primitive appends one node holding its output value and the
//! information its adjoint rule needs. Nodes are stored in creation order,
//! so the tape is topologically sorted by construction and `backward`
//! simply walks it in reverse.
//!
//! Parameters enter the tape through [`Tape::param`]. The first call for a
//! given [`ParamId`] creates a leaf; later calls return the same leaf, so a
//! block applied K times feeds all K gradient contributions into one
//! accumulator.

use std::collections::HashMap;
use std::rc::Rc;

use super::gemm::gemm;
use super::{ParamId, ParamStore, Tensor};
use crate::error::{invalid, Error, Result};

/// Negative slope used by [`Tape::leaky_relu`] throughout the crate.
pub const LEAKY_SLOPE: f64 = 0.01;
const LAYERNORM_EPS: f64 = 1e-5;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Directed edge list shared by the message-passing primitives.
///
/// An edge `(u, v)` carries a message from `u` into `v`.
#[derive(Clone, Debug, PartialEq)]
pub struct Topology {
    pub nodes: usize,
    pub edges: Vec<(usize, usize)>,
    in_degree: Vec<usize>,
}

impl Topology {
    pub fn new(nodes: usize, edges: Vec<(usize, usize)>) -> Result<Self> {
        let mut in_degree = vec![0; nodes];
        for (i, &(u, v)) in edges.iter().enumerate() {
            if u >= nodes || v >= nodes {
                return Err(invalid(
                    "topology",
                    format!("edge {i} ({u}, {v}) out of range for {nodes} nodes"),
                ));
            }
            in_degree[v] += 1;
        }
        Ok(Self {
            nodes,
            edges,
            in_degree,
        })
    }

    pub fn in_degree(&self, v: usize) -> usize {
        self.in_degree[v]
    }
}

#[derive(Debug)]
enum Op {
    Constant,
    Input,
    Param(ParamId),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    ScaleBy(Var, Var),
    Scale(Var, f64),
    Shift(Var),
    MatMul { a: Var, b: Var, m: usize, k: usize, n: usize },
    Transpose { x: Var, rows: usize, cols: usize },
    Reshape(Var),
    LeakyRelu(Var, f64),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Sqrt(Var),
    Softmax(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    Sum(Var),
    Mean(Var),
    RowSum(Var),
    Concat(Vec<(Var, usize)>),
    Gather { table: Var, ids: Rc<[usize]> },
    Dropout { x: Var, mask: Vec<f64> },
    Attention { q: Var, k: Var, v: Var, heads: usize, seq_len: usize, probs: Vec<f64> },
    Aggregate { x: Var, topo: Rc<Topology>, mean: bool },
    SegmentSum { x: Var, seg: Rc<[usize]>, inv_counts: Option<Vec<f64>> },
    SegmentSoftmax { x: Var, seg: Rc<[usize]> },
    ScaleRows { x: Var, w: Var },
    CrossEntropy { logits: Var, targets: Rc<[usize]>, probs: Vec<f64> },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Gradients produced by one backward pass.
///
/// Only leaves keep their gradient; intermediates are released as soon as
/// they have been propagated.
#[derive(Debug)]
pub struct Gradients {
    leaves: HashMap<usize, Tensor>,
    params: Vec<(ParamId, Tensor)>,
}

impl Gradients {
    /// Gradient with respect to a leaf created by [`Tape::input`],
    /// [`Tape::constant`] or [`Tape::param`]. Unreached leaves have no entry.
    pub fn of(&self, var: Var) -> Option<&Tensor> {
        self.leaves.get(&var.0)
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.iter().find(|(p, _)| *p == id).map(|(_, g)| g)
    }

    pub fn params(&self) -> &[(ParamId, Tensor)] {
        &self.params
    }

    /// Adds every parameter gradient into the store's accumulators.
    pub fn accumulate_into(&self, store: &mut ParamStore) {
        for (id, g) in &self.params {
            let acc = &mut store.get_mut(*id).grad;
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
    }
}

/// The computation record of one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
    consumed: bool,
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Result<Var> {
        if self.consumed {
            return Err(Error::RecordConsumed);
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    fn val(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Leaf that does not need a gradient (data, masks, targets).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Constant,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf whose gradient is reported by [`Gradients::of`].
    pub fn input(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Input,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf bound to a parameter. Repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        self.nodes.push(Node {
            value: store.value(id).clone(),
            op: Op::Param(id),
        });
        let v = Var(self.nodes.len() - 1);
        self.params.insert(id, v);
        v
    }

    fn zip_same(&self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.val(a), self.val(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(op, ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    /// Elementwise sum. `b` may also be a row vector matching the last axis of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.val(a), self.val(b));
        if ta.shape() == tb.shape() {
            let out = self.zip_same("add", a, b, |x, y| x + y)?;
            return self.push(out, Op::Add(a, b));
        }
        if tb.ndim() == 1 && ta.ndim() >= 1 && ta.last_dim() == tb.numel() {
            let d = tb.numel();
            let mut out = ta.clone();
            for row in out.data_mut().chunks_mut(d) {
                for (o, bias) in row.iter_mut().zip(tb.data()) {
                    *o += bias;
                }
            }
            return self.push(out, Op::AddRow(a, b));
        }
        Err(shape_err("add", ta, tb))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("sub", a, b, |x, y| x - y)?;
        self.push(out, Op::Sub(a, b))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("mul", a, b, |x, y| x * y)?;
        self.push(out, Op::Mul(a, b))
    }

    /// `s * x` for a one-element tensor `s` that itself carries a gradient.
    pub fn scale_by(&mut self, s: Var, x: Var) -> Result<Var> {
        let ts = self.val(s);
        if ts.numel() != 1 {
            return Err(shape_err("scale_by", ts, self.val(x)));
        }
        let c = ts.data()[0];
        let out = self.val(x).map(|v| c * v);
        self.push(out, Op::ScaleBy(s, x))
    }

    /// `c * x` for a constant `c`.
    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let out = self.val(x).map(|v| c * v);
        self.push(out, Op::Scale(x, c))
    }

    /// `x + c` for a constant `c`.
    pub fn shift(&mut self, x: Var, c: f64) -> Result<Var> {
        let out = self.val(x).map(|v| v + c);
        self.push(out, Op::Shift(x))
    }

    /// Matrix product. A one-dimensional `a` is treated as a single row and
    /// yields a one-dimensional result.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.val(a), self.val(b));
        if tb.ndim() != 2 || ta.ndim() == 0 || ta.ndim() > 2 || ta.last_dim() != tb.shape()[0] {
            return Err(shape_err("matmul", ta, tb));
        }
        let k = ta.last_dim();
        let m = ta.rows();
        let n = tb.shape()[1];
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, ta.data(), false, tb.data(), false, &mut out, false);
        let shape = if ta.ndim() == 1 { vec![n] } else { vec![m, n] };
        let value = Tensor::new(shape, out)?;
        self.push(value, Op::MatMul { a, b, m, k, n })
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let t = self.val(x);
        if t.ndim() != 2 {
            return Err(invalid("transpose", format!("expected a matrix, got {:?}", t.shape())));
        }
        let (rows, cols) = (t.shape()[0], t.shape()[1]);
        let mut out = vec![0.0; rows * cols];
        for i in 0..rows {
            for j in 0..cols {
                out[j * rows + i] = t.data()[i * cols + j];
            }
        }
        let value = Tensor::new(vec![cols, rows], out)?;
        self.push(value, Op::Transpose { x, rows, cols })
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.val(x).clone().reshaped(shape.to_vec())?;
        self.push(value, Op::Reshape(x))
    }

    pub fn leaky_relu(&mut self, x: Var) -> Result<Var> {
        let out = self.val(x).map(|v| if v > 0.0 { v } else { LEAKY_SLOPE * v });
        self.push(out, Op::LeakyRelu(x, LEAKY_SLOPE))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = self.val(x).map(|v| v.max(0.0));
        self.push(out, Op::Relu(x))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let out = self.val(x).map(f64::tanh);
        self.push(out, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let out = self.val(x).map(|v| 1.0 / (1.0 + (-v).exp()));
        self.push(out, Op::Sigmoid(x))
    }

    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        let out = self.val(x).map(f64::sqrt);
        self.push(out, Op::Sqrt(x))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let t = self.val(x);
        let d = t.last_dim();
        let mut out = t.clone();
        if d > 0 {
            for row in out.data_mut().chunks_mut(d) {
                softmax_in_place(row);
            }
        }
        self.push(out, Op::Softmax(x))
    }

    /// Layer normalization over the last axis with learned gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (t, g, b) = (self.val(x), self.val(gain), self.val(bias));
        let d = t.last_dim();
        if g.shape() != [d] || b.shape() != [d] {
            return Err(shape_err("layer_norm", t, g));
        }
        let rows = t.rows();
        let mut xhat = vec![0.0; t.numel()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; t.numel()];
        for r in 0..rows {
            let row = &t.data()[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + LAYERNORM_EPS).sqrt();
            inv_std[r] = is;
            for j in 0..d {
                let xh = (row[j] - mean) * is;
                xhat[r * d + j] = xh;
                out[r * d + j] = xh * g.data()[j] + b.data()[j];
            }
        }
        let value = Tensor::new(t.shape().to_vec(), out)?;
        self.push(
            value,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
        )
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.val(x).sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    /// Mean of all entries, as a scalar.
    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.val(x);
        if t.numel() == 0 {
            return Err(invalid("mean", "empty tensor"));
        }
        let m = t.sum() / t.numel() as f64;
        self.push(Tensor::scalar(m), Op::Mean(x))
    }

    /// Sum over the last axis: `[rows, d] -> [rows]`.
    pub fn row_sum(&mut self, x: Var) -> Result<Var> {
        let t = self.val(x);
        let out: Vec<f64> = (0..t.rows()).map(|r| t.row(r).iter().sum()).collect();
        self.push(Tensor::vector(out), Op::RowSum(x))
    }

    /// Concatenation along the last axis of matrices with equal row counts.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| invalid("concat", "no inputs"))?;
        let rows = self.val(*first).rows();
        let one_d = self.val(*first).ndim() == 1;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let t = self.val(p);
            if t.rows() != rows || (t.ndim() == 1) != one_d {
                return Err(shape_err("concat", self.val(*first), t));
            }
            widths.push((p, t.last_dim()));
        }
        let total: usize = widths.iter().map(|w| w.1).sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &(p, _) in &widths {
                out.extend_from_slice(self.val(p).row(r));
            }
        }
        let shape = if one_d { vec![total] } else { vec![rows, total] };
        let value = Tensor::new(shape, out)?;
        self.push(value, Op::Concat(widths))
    }

    /// Row lookup: `table[ids[i]]` for each `i`. Used for token embeddings
    /// and for broadcasting per-graph states onto their nodes.
    pub fn gather(&mut self, table: Var, ids: Rc<[usize]>) -> Result<Var> {
        let t = self.val(table);
        if t.ndim() != 2 {
            return Err(invalid("gather", format!("table must be a matrix, got {:?}", t.shape())));
        }
        let (n, d) = (t.shape()[0], t.shape()[1]);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids.iter() {
            if i >= n {
                return Err(invalid("gather", format!("index {i} out of range for {n} rows")));
            }
            out.extend_from_slice(t.row(i));
        }
        let value = Tensor::new(vec![ids.len(), d], out)?;
        self.push(value, Op::Gather { table, ids })
    }

    /// Multiplies by a pre-sampled mask (entries 0 or 1/(1-p)).
    pub fn dropout(&mut self, x: Var, mask: Vec<f64>) -> Result<Var> {
        let t = self.val(x);
        if mask.len() != t.numel() {
            return Err(invalid("dropout", format!("mask length {} for {:?}", mask.len(), t.shape())));
        }
        let data = t.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let value = Tensor::new(t.shape().to_vec(), data)?;
        self.push(value, Op::Dropout { x, mask })
    }

    /// Multi-head scaled dot-product attention.
    ///
    /// `q`, `k`, `v` are `[batch * seq_len, d]`; rows are grouped into
    /// consecutive sequences of `seq_len`. When `causal`, position `j` only
    /// attends to positions `<= j`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, seq_len: usize, causal: bool) -> Result<Var> {
        let (tq, tk, tv) = (self.val(q), self.val(k), self.val(v));
        if tq.shape() != tk.shape() || tq.shape() != tv.shape() || tq.ndim() != 2 {
            return Err(shape_err("attention", tq, tk));
        }
        let (rows, d) = (tq.shape()[0], tq.shape()[1]);
        if heads == 0 || d % heads != 0 {
            return Err(invalid("attention", format!("{heads} heads do not divide width {d}")));
        }
        if seq_len == 0 || rows % seq_len != 0 {
            return Err(invalid("attention", format!("{rows} rows are not a multiple of sequence length {seq_len}")));
        }
        let batch = rows / seq_len;
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let t = seq_len;
        let mut probs = vec![0.0; batch * heads * t * t];
        let mut out = vec![0.0; rows * d];
        let (qd, kd, vd) = (tq.data(), tk.data(), tv.data());
        for b in 0..batch {
            for h in 0..heads {
                let p = &mut probs[(b * heads + h) * t * t..(b * heads + h + 1) * t * t];
                for i in 0..t {
                    let qi = &qd[(b * t + i) * d + h * dh..(b * t + i) * d + (h + 1) * dh];
                    let limit = if causal { i + 1 } else { t };
                    let row = &mut p[i * t..(i + 1) * t];
                    for j in 0..limit {
                        let kj = &kd[(b * t + j) * d + h * dh..(b * t + j) * d + (h + 1) * dh];
                        row[j] = scale * qi.iter().zip(kj).map(|(x, y)| x * y).sum::<f64>();
                    }
                    softmax_in_place(&mut row[..limit]);
                    let o = &mut out[(b * t + i) * d + h * dh..(b * t + i) * d + (h + 1) * dh];
                    for j in 0..limit {
                        let w = row[j];
                        let vj = &vd[(b * t + j) * d + h * dh..(b * t + j) * d + (h + 1) * dh];
                        for (oo, vv) in o.iter_mut().zip(vj) {
                            *oo += w * vv;
                        }
                    }
                }
            }
        }
        let value = Tensor::new(vec![rows, d], out)?;
        self.push(
            value,
            Op::Attention {
                q,
                k,
                v,
                heads,
                seq_len,
                probs,
            },
        )
    }

    /// Attention weights recorded by an [`attention`](Self::attention) node,
    /// laid out as `[batch, heads, seq_len, seq_len]`.
    pub fn attention_weights(&self, v: Var) -> Option<&[f64]> {
        match &self.nodes[v.0].op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    /// Neighbourhood aggregation: row `v` of the output is the sum (or mean)
    /// of `x[u]` over edges `(u, v)`. Nodes without incoming edges get zero.
    pub fn aggregate(&mut self, x: Var, topo: Rc<Topology>, mean: bool) -> Result<Var> {
        let t = self.val(x);
        if t.ndim() != 2 || t.shape()[0] != topo.nodes {
            return Err(invalid(
                "aggregate",
                format!("features {:?} do not match {} nodes", t.shape(), topo.nodes),
            ));
        }
        let d = t.shape()[1];
        let mut out = vec![0.0; topo.nodes * d];
        for &(u, v) in &topo.edges {
            let w = if mean { 1.0 / topo.in_degree(v) as f64 } else { 1.0 };
            let src = t.row(u);
            for (o, s) in out[v * d..(v + 1) * d].iter_mut().zip(src) {
                *o += w * s;
            }
        }
        let value = Tensor::new(vec![topo.nodes, d], out)?;
        self.push(value, Op::Aggregate { x, topo, mean })
    }

    /// Sums (or averages) rows of `x` into `groups` buckets given by `seg`.
    pub fn segment_sum(&mut self, x: Var, seg: Rc<[usize]>, groups: usize, mean: bool) -> Result<Var> {
        let t = self.val(x);
        if t.rows() != seg.len() {
            return Err(invalid("segment_sum", format!("{} rows for {} segment ids", t.rows(), seg.len())));
        }
        let d = t.last_dim();
        let mut counts = vec![0usize; groups];
        for &s in seg.iter() {
            if s >= groups {
                return Err(invalid("segment_sum", format!("segment {s} out of range for {groups} groups")));
            }
            counts[s] += 1;
        }
        let mut out = vec![0.0; groups * d];
        for (r, &s) in seg.iter().enumerate() {
            for (o, v) in out[s * d..(s + 1) * d].iter_mut().zip(t.row(r)) {
                *o += v;
            }
        }
        let inv_counts = mean.then(|| counts.iter().map(|&c| if c > 0 { 1.0 / c as f64 } else { 0.0 }).collect::<Vec<_>>());
        if let Some(ic) = &inv_counts {
            for (g, w) in ic.iter().enumerate() {
                out[g * d..(g + 1) * d].iter_mut().for_each(|o| *o *= w);
            }
        }
        let shape = if t.ndim() == 1 { vec![groups] } else { vec![groups, d] };
        let value = Tensor::new(shape, out)?;
        self.push(value, Op::SegmentSum { x, seg, inv_counts })
    }

    /// Softmax of a vector taken separately within each segment.
    pub fn segment_softmax(&mut self, x: Var, seg: Rc<[usize]>, groups: usize) -> Result<Var> {
        let t = self.val(x);
        if t.ndim() != 1 || t.numel() != seg.len() {
            return Err(invalid("segment_softmax", format!("{:?} for {} segment ids", t.shape(), seg.len())));
        }
        let mut max = vec![f64::NEG_INFINITY; groups];
        for (&s, &v) in seg.iter().zip(t.data()) {
            if s >= groups {
                return Err(invalid("segment_softmax", format!("segment {s} out of range")));
            }
            max[s] = max[s].max(v);
        }
        let mut out: Vec<f64> = seg.iter().zip(t.data()).map(|(&s, &v)| (v - max[s]).exp()).collect();
        let mut total = vec![0.0; groups];
        for (&s, &e) in seg.iter().zip(&out) {
            total[s] += e;
        }
        for (o, &s) in out.iter_mut().zip(seg.iter()) {
            *o /= total[s];
        }
        self.push(Tensor::vector(out), Op::SegmentSoftmax { x, seg })
    }

    /// Scales row `r` of `x` by `w[r]`.
    pub fn scale_rows(&mut self, x: Var, w: Var) -> Result<Var> {
        let (tx, tw) = (self.val(x), self.val(w));
        if tw.ndim() != 1 || tw.numel() != tx.rows() {
            return Err(shape_err("scale_rows", tx, tw));
        }
        let d = tx.last_dim();
        let mut out = tx.clone();
        for (row, &s) in out.data_mut().chunks_mut(d.max(1)).zip(tw.data()) {
            row.iter_mut().for_each(|v| *v *= s);
        }
        self.push(out, Op::ScaleRows { x, w })
    }

    /// Mean negative log-softmax of the target class in each row of `logits`.
    pub fn cross_entropy(&mut self, logits: Var, targets: Rc<[usize]>) -> Result<Var> {
        let t = self.val(logits);
        let v = t.last_dim();
        if t.rows() != targets.len() || targets.is_empty() {
            return Err(invalid("cross_entropy", format!("{} rows for {} targets", t.rows(), targets.len())));
        }
        let mut probs = t.data().to_vec();
        let mut loss = 0.0;
        for (r, &y) in targets.iter().enumerate() {
            if y >= v {
                return Err(invalid("cross_entropy", format!("target class {y} outside vocabulary of {v}")));
            }
            let row = &mut probs[r * v..(r + 1) * v];
            softmax_in_place(row);
            loss -= row[y].max(f64::MIN_POSITIVE).ln();
        }
        loss /= targets.len() as f64;
        self.push(Tensor::scalar(loss), Op::CrossEntropy { logits, targets, probs })
    }

    /// Reverse sweep from a scalar `loss`. Consumes the record.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::RecordConsumed);
        }
        let lt = self.val(loss);
        if lt.numel() != 1 {
            return Err(Error::NonScalarLoss(lt.shape().to_vec()));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        let mut leaves = HashMap::new();
        let mut params = Vec::new();
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Constant | Op::Input => {
                    leaves.insert(i, Tensor::new(node.value.shape().to_vec(), g)?);
                }
                Op::Param(id) => {
                    let t = Tensor::new(node.value.shape().to_vec(), g)?;
                    leaves.insert(i, t.clone());
                    params.push((*id, t));
                }
                _ => self.propagate(i, &g, &mut grads),
            }
        }
        params.sort_by_key(|(id, _)| *id);
        Ok(Gradients { leaves, params })
    }

    /// Runs [`backward`](Self::backward) and adds parameter gradients into `store`.
    pub fn backward_into(&mut self, loss: Var, store: &mut ParamStore) -> Result<Gradients> {
        let grads = self.backward(loss)?;
        grads.accumulate_into(store);
        Ok(grads)
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        macro_rules! acc {
            ($v:expr) => {
                slot(grads, nodes, $v)
            };
        }
        let out = &nodes[i].value;
        match &nodes[i].op {
            Op::Constant | Op::Input | Op::Param(_) => unreachable!(),
            Op::Add(a, b) => {
                add_into(acc!(*a), g);
                add_into(acc!(*b), g);
            }
            Op::AddRow(a, b) => {
                add_into(acc!(*a), g);
                let gb = acc!(*b);
                let d = gb.len();
                for row in g.chunks(d) {
                    add_into(gb, row);
                }
            }
            Op::Sub(a, b) => {
                add_into(acc!(*a), g);
                acc!(*b).iter_mut().zip(g).for_each(|(x, y)| *x -= y);
            }
            Op::Mul(a, b) => {
                let (va, vb) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                acc!(*a).iter_mut().zip(g.iter().zip(vb)).for_each(|(x, (gg, y))| *x += gg * y);
                acc!(*b).iter_mut().zip(g.iter().zip(va)).for_each(|(x, (gg, y))| *x += gg * y);
            }
            Op::ScaleBy(s, x) => {
                let c = nodes[s.0].value.data()[0];
                let vx = nodes[x.0].value.data();
                let ds: f64 = g.iter().zip(vx).map(|(a, b)| a * b).sum();
                acc!(*s)[0] += ds;
                acc!(*x).iter_mut().zip(g).for_each(|(a, b)| *a += c * b);
            }
            Op::Scale(x, c) => acc!(*x).iter_mut().zip(g).for_each(|(a, b)| *a += c * b),
            Op::Shift(x) | Op::Reshape(x) => add_into(acc!(*x), g),
            Op::MatMul { a, b, m, k, n } => {
                let (m, k, n) = (*m, *k, *n);
                let va = nodes[a.0].value.data();
                let vb = nodes[b.0].value.data();
                // dA = G B^T, dB = A^T G
                gemm(m, n, k, g, false, vb, true, acc!(*a), true);
                gemm(k, m, n, va, true, g, false, acc!(*b), true);
            }
            Op::Transpose { x, rows, cols } => {
                let gx = acc!(*x);
                for i in 0..*rows {
                    for j in 0..*cols {
                        gx[i * cols + j] += g[j * rows + i];
                    }
                }
            }
            Op::LeakyRelu(x, slope) => {
                let vx = nodes[x.0].value.data();
                acc!(*x).iter_mut().zip(g.iter().zip(vx)).for_each(|(a, (gg, xx))| {
                    *a += if *xx > 0.0 { *gg } else { slope * gg };
                });
            }
            Op::Relu(x) => {
                let vx = nodes[x.0].value.data();
                acc!(*x).iter_mut().zip(g.iter().zip(vx)).for_each(|(a, (gg, xx))| {
                    if *xx > 0.0 {
                        *a += gg;
                    }
                });
            }
            Op::Tanh(x) => acc!(*x)
                .iter_mut()
                .zip(g.iter().zip(out.data()))
                .for_each(|(a, (gg, y))| *a += gg * (1.0 - y * y)),
            Op::Sigmoid(x) => acc!(*x)
                .iter_mut()
                .zip(g.iter().zip(out.data()))
                .for_each(|(a, (gg, y))| *a += gg * y * (1.0 - y)),
            Op::Sqrt(x) => acc!(*x)
                .iter_mut()
                .zip(g.iter().zip(out.data()))
                .for_each(|(a, (gg, y))| *a += gg * 0.5 / y),
            Op::Softmax(x) => {
                let d = out.last_dim().max(1);
                let gx = acc!(*x);
                for ((gr, yr), ar) in g.chunks(d).zip(out.data().chunks(d)).zip(gx.chunks_mut(d)) {
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for j in 0..gr.len() {
                        ar[j] += yr[j] * (gr[j] - dot);
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let d = out.last_dim();
                let gv = nodes[gain.0].value.data();
                {
                    let gg = acc!(*gain);
                    for (grow, xrow) in g.chunks(d).zip(xhat.chunks(d)) {
                        for j in 0..d {
                            gg[j] += grow[j] * xrow[j];
                        }
                    }
                }
                {
                    let gb = acc!(*bias);
                    for grow in g.chunks(d) {
                        add_into(gb, grow);
                    }
                }
                let gx = acc!(*x);
                let df = d as f64;
                for (r, (grow, xrow)) in g.chunks(d).zip(xhat.chunks(d)).enumerate() {
                    let mut s1 = 0.0;
                    let mut s2 = 0.0;
                    for j in 0..d {
                        let dxh = grow[j] * gv[j];
                        s1 += dxh;
                        s2 += dxh * xrow[j];
                    }
                    let is = inv_std[r];
                    for j in 0..d {
                        let dxh = grow[j] * gv[j];
                        gx[r * d + j] += is / df * (df * dxh - s1 - xrow[j] * s2);
                    }
                }
            }
            Op::Sum(x) => {
                let s = g[0];
                acc!(*x).iter_mut().for_each(|a| *a += s);
            }
            Op::Mean(x) => {
                let gx = acc!(*x);
                let s = g[0] / gx.len() as f64;
                gx.iter_mut().for_each(|a| *a += s);
            }
            Op::RowSum(x) => {
                let d = nodes[x.0].value.last_dim().max(1);
                let gx = acc!(*x);
                for (row, gg) in gx.chunks_mut(d).zip(g) {
                    row.iter_mut().for_each(|a| *a += gg);
                }
            }
            Op::Concat(parts) => {
                let total: usize = parts.iter().map(|p| p.1).sum();
                let mut offset = 0;
                for &(p, w) in parts {
                    let gp = acc!(p);
                    for (r, row) in g.chunks(total.max(1)).enumerate() {
                        add_into(&mut gp[r * w..(r + 1) * w], &row[offset..offset + w]);
                    }
                    offset += w;
                }
            }
            Op::Gather { table, ids } => {
                let d = out.last_dim();
                let gt = acc!(*table);
                for (r, &id) in ids.iter().enumerate() {
                    add_into(&mut gt[id * d..(id + 1) * d], &g[r * d..(r + 1) * d]);
                }
            }
            Op::Dropout { x, mask } => acc!(*x)
                .iter_mut()
                .zip(g.iter().zip(mask))
                .for_each(|(a, (gg, m))| *a += gg * m),
            Op::Attention {
                q,
                k,
                v,
                heads,
                seq_len,
                probs,
            } => {
                let (rows, d) = (out.shape()[0], out.shape()[1]);
                let (heads, t) = (*heads, *seq_len);
                let dh = d / heads;
                let scale = 1.0 / (dh as f64).sqrt();
                let (qd, kd, vd) = (nodes[q.0].value.data(), nodes[k.0].value.data(), nodes[v.0].value.data());
                let mut gq = vec![0.0; rows * d];
                let mut gk = vec![0.0; rows * d];
                let mut gv = vec![0.0; rows * d];
                let mut dp = vec![0.0; t];
                for b in 0..rows / t {
                    for h in 0..heads {
                        let p = &probs[(b * heads + h) * t * t..(b * heads + h + 1) * t * t];
                        let sl = |r: usize| (b * t + r) * d + h * dh..(b * t + r) * d + (h + 1) * dh;
                        for i in 0..t {
                            let go = &g[sl(i)];
                            let prow = &p[i * t..(i + 1) * t];
                            // dP_ij = dO_i . V_j ; dV_j += P_ij dO_i
                            for j in 0..t {
                                if prow[j] == 0.0 {
                                    dp[j] = 0.0;
                                    continue;
                                }
                                let vj = &vd[sl(j)];
                                dp[j] = go.iter().zip(vj).map(|(a, b)| a * b).sum();
                                let w = prow[j];
                                gv[sl(j)].iter_mut().zip(go).for_each(|(a, b)| *a += w * b);
                            }
                            let dot: f64 = prow.iter().zip(&dp).map(|(a, b)| a * b).sum();
                            for j in 0..t {
                                let ds = prow[j] * (dp[j] - dot) * scale;
                                if ds == 0.0 {
                                    continue;
                                }
                                let kj = &kd[sl(j)];
                                gq[sl(i)].iter_mut().zip(kj).for_each(|(a, b)| *a += ds * b);
                                let qi = &qd[sl(i)];
                                gk[sl(j)].iter_mut().zip(qi).for_each(|(a, b)| *a += ds * b);
                            }
                        }
                    }
                }
                add_into(acc!(*q), &gq);
                add_into(acc!(*k), &gk);
                add_into(acc!(*v), &gv);
            }
            Op::Aggregate { x, topo, mean } => {
                let d = out.last_dim();
                let gx = acc!(*x);
                for &(u, v) in &topo.edges {
                    let w = if *mean { 1.0 / topo.in_degree(v) as f64 } else { 1.0 };
                    for j in 0..d {
                        gx[u * d + j] += w * g[v * d + j];
                    }
                }
            }
            Op::SegmentSum { x, seg, inv_counts } => {
                let d = nodes[x.0].value.last_dim();
                let gx = acc!(*x);
                for (r, &s) in seg.iter().enumerate() {
                    let w = inv_counts.as_ref().map_or(1.0, |ic| ic[s]);
                    for j in 0..d {
                        gx[r * d + j] += w * g[s * d + j];
                    }
                }
            }
            Op::SegmentSoftmax { x, seg } => {
                let y = out.data();
                let groups = seg.iter().max().map_or(0, |m| m + 1);
                let mut dot = vec![0.0; groups];
                for ((&s, gg), yy) in seg.iter().zip(g).zip(y) {
                    dot[s] += gg * yy;
                }
                let gx = acc!(*x);
                for (r, &s) in seg.iter().enumerate() {
                    gx[r] += y[r] * (g[r] - dot[s]);
                }
            }
            Op::ScaleRows { x, w } => {
                let vx = nodes[x.0].value.data();
                let vw = nodes[w.0].value.data();
                let d = nodes[x.0].value.last_dim().max(1);
                {
                    let gw = acc!(*w);
                    for (r, (grow, xrow)) in g.chunks(d).zip(vx.chunks(d)).enumerate() {
                        gw[r] += grow.iter().zip(xrow).map(|(a, b)| a * b).sum::<f64>();
                    }
                }
                let gx = acc!(*x);
                for (r, (grow, arow)) in g.chunks(d).zip(gx.chunks_mut(d)).enumerate() {
                    arow.iter_mut().zip(grow).for_each(|(a, b)| *a += vw[r] * b);
                }
            }
            Op::CrossEntropy { logits, targets, probs } => {
                let v = nodes[logits.0].value.last_dim();
                let s = g[0] / targets.len() as f64;
                let gl = acc!(*logits);
                for (r, &y) in targets.iter().enumerate() {
                    for j in 0..v {
                        let ind = if j == y { 1.0 } else { 0.0 };
                        gl[r * v + j] += s * (probs[r * v + j] - ind);
                    }
                }
            }
        }
    }
}

fn slot<'a>(grads: &'a mut [Option<Vec<f64>>], nodes: &[Node], v: Var) -> &'a mut Vec<f64> {
    grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.numel()])
}

fn add_into(acc: &mut [f64], g: &[f64]) {
    acc.iter_mut().zip(g).for_each(|(a, b)| *a += b);
}

/// Numerically stable in-place softmax of one row.
pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}
