//! Define-by-run computation tape with reverse-mode differentiation.
//!
//! Operations execute eagerly as they are pushed; each push records the op,
//! its input node ids, and the output value. `backward` replays the tape in
//! reverse, accumulating gradients via the chain rule. The tape is rebuilt
//! per forward pass; values live in a bump arena that is recycled across
//! passes with `clear`, so steady-state training does not allocate.
//!
//! Values are internally 2-D (rows x cols); vectors are rows of shape
//! `1 x n` and scalars are `1 x 1`. All arithmetic is f64.

use std::sync::Arc;

use super::kernels;
use super::{Array, DiffError};

/// Handle to a tape node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Broadcast {
    Same,
    /// Second operand is a length-`cols` row broadcast over all rows.
    Row,
    /// Second operand is a single scalar.
    Scalar,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Matmul { a: usize, b: usize },
    /// a[m,k] * b[n,k]^T; b is stored row-major as [n,k].
    MatmulNt { a: usize, b: usize },
    /// x[m,k] * w[k,n] + bias[n], optionally followed by relu.
    Linear { x: usize, w: usize, bias: usize, relu: bool },
    Transpose { a: usize },
    Add { a: usize, b: usize, bc: Broadcast },
    Mul { a: usize, b: usize, bc: Broadcast },
    Scale { a: usize, c: f64 },
    Relu { a: usize },
    Sigmoid { a: usize },
    Ln { a: usize },
    Softmax { a: usize },
    LayerNorm { a: usize, eps: f64 },
    ConcatCols { inputs: Vec<usize> },
    SliceCols { a: usize, start: usize },
    GatherRows { a: usize, idx: Arc<Vec<usize>> },
    ScatterSumRows { a: usize, idx: Arc<Vec<usize>> },
    RepeatRow { a: usize },
    /// Per-edge feature assembly: out[e] = [src[is[e]] ++ tgt[it[e]] ++ gamma].
    EdgeConcat {
        src: usize,
        tgt: usize,
        gamma: usize,
        idx_src: Arc<Vec<usize>>,
        idx_tgt: Arc<Vec<usize>>,
    },
    SumAll { a: usize },
    Reshape { a: usize },
    BceWithLogitsMean { logits: usize, targets: usize },
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    rows: usize,
    cols: usize,
    ndim: u8,
    off: usize,
    rg: bool,
}

/// Reverse-mode autodiff tape.
pub struct Tape {
    nodes: Vec<Node>,
    vals: Vec<f64>,
    grads: Vec<f64>,
    grad_ready: Vec<bool>,
    validate: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    /// Tape with per-op finiteness validation (the contract default).
    pub fn new() -> Self {
        Self::with_validation(true)
    }

    /// `validate = false` skips the per-op finiteness scan. Used by the
    /// training hot loop, which checks the scalar loss every step instead.
    pub fn with_validation(validate: bool) -> Self {
        Tape {
            nodes: Vec::new(),
            vals: Vec::new(),
            grads: Vec::new(),
            grad_ready: Vec::new(),
            validate,
        }
    }

    /// Drop all nodes but keep allocated capacity for reuse.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.vals.clear();
        self.grad_ready.clear();
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, rows: usize, cols: usize, ndim: u8, rg: bool) -> Result<NodeId, DiffError> {
        let id = self.nodes.len();
        let off = self.vals.len();
        let len = rows * cols;
        self.vals.resize(off + len, 0.0);
        self.nodes.push(Node { op, rows, cols, ndim, off, rg });
        Ok(NodeId(id))
    }

    fn finish(&mut self, id: NodeId) -> Result<NodeId, DiffError> {
        if self.validate {
            let n = &self.nodes[id.0];
            let out = &self.vals[n.off..n.off + n.rows * n.cols];
            if !out.iter().all(|v| v.is_finite()) {
                return Err(DiffError::NonFinite { node: id.0 });
            }
        }
        Ok(id)
    }

    #[inline]
    fn dims(&self, id: NodeId) -> (usize, usize) {
        let n = &self.nodes[id.0];
        (n.rows, n.cols)
    }

    /// (rows, cols) of a node.
    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        self.dims(id)
    }

    /// Raw row-major value slice of a node.
    pub fn value(&self, id: NodeId) -> &[f64] {
        let n = &self.nodes[id.0];
        &self.vals[n.off..n.off + n.rows * n.cols]
    }

    /// Value copied out as an `Array`, preserving 1-D/2-D rank.
    pub fn value_array(&self, id: NodeId) -> Array {
        let n = &self.nodes[id.0];
        let data = self.value(id).to_vec();
        let shape = if n.ndim == 1 { vec![n.cols] } else { vec![n.rows, n.cols] };
        Array { shape, data, requires_grad: false }
    }

    /// Gradient slice of a node after `backward`, if it was reached.
    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        if !*self.grad_ready.get(id.0)? {
            return None;
        }
        let n = &self.nodes[id.0];
        Some(&self.grads[n.off..n.off + n.rows * n.cols])
    }

    /// Gradient as an `Array` shaped like the node. Parameters that do not
    /// influence the root get an exact zero gradient.
    pub fn grad_array(&self, id: NodeId) -> Array {
        let n = &self.nodes[id.0];
        let data = match self.grad(id) {
            Some(g) => g.to_vec(),
            None => vec![0.0; n.rows * n.cols],
        };
        let shape = if n.ndim == 1 { vec![n.cols] } else { vec![n.rows, n.cols] };
        Array { shape, data, requires_grad: false }
    }

    // ------------------------------------------------------------------
    // Leaves
    // ------------------------------------------------------------------

    /// Push an array as a leaf. `requires_grad` is taken from the array.
    pub fn leaf(&mut self, arr: &Array) -> Result<NodeId, DiffError> {
        let (rows, cols, ndim) = match arr.shape.len() {
            1 => (1, arr.shape[0], 1u8),
            2 => (arr.shape[0], arr.shape[1], 2u8),
            d => {
                return Err(DiffError::Shape {
                    op: "leaf",
                    node: self.nodes.len(),
                    info: format!("tape supports 1-D/2-D values, got {d}-D"),
                })
            }
        };
        let id = self.push(Op::Leaf, rows, cols, ndim, arr.requires_grad)?;
        let n = &self.nodes[id.0];
        self.vals[n.off..n.off + rows * cols].copy_from_slice(&arr.data);
        self.finish(id)
    }

    /// Push a raw row-major matrix leaf.
    pub fn leaf_data(&mut self, rows: usize, cols: usize, data: &[f64], rg: bool) -> Result<NodeId, DiffError> {
        if data.len() != rows * cols {
            return Err(DiffError::Shape {
                op: "leaf",
                node: self.nodes.len(),
                info: format!("data length {} != {rows}x{cols}", data.len()),
            });
        }
        let id = self.push(Op::Leaf, rows, cols, 2, rg)?;
        let n = &self.nodes[id.0];
        self.vals[n.off..n.off + rows * cols].copy_from_slice(data);
        self.finish(id)
    }

    /// Scalar constant leaf.
    pub fn scalar(&mut self, v: f64) -> Result<NodeId, DiffError> {
        let id = self.push(Op::Leaf, 1, 1, 1, false)?;
        let off = self.nodes[id.0].off;
        self.vals[off] = v;
        self.finish(id)
    }

    // ------------------------------------------------------------------
    // Ops
    // ------------------------------------------------------------------

    /// Allocate the output region and return disjoint (inputs, output) views.
    fn out_and_prev(&mut self, id: NodeId) -> (&[f64], &mut [f64]) {
        let n = &self.nodes[id.0];
        let (off, len) = (n.off, n.rows * n.cols);
        let (prev, rest) = self.vals.split_at_mut(off);
        (prev, &mut rest[..len])
    }

    fn in_slice<'a>(prev: &'a [f64], node: &Node) -> &'a [f64] {
        &prev[node.off..node.off + node.rows * node.cols]
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k != k2 {
            return Err(DiffError::Shape {
                op: "matmul",
                node: self.nodes.len(),
                info: format!("[{m}x{k}] * [{k2}x{n}]"),
            });
        }
        let rg = self.nodes[a.0].rg || self.nodes[b.0].rg;
        let id = self.push(Op::Matmul { a: a.0, b: b.0 }, m, n, 2, rg)?;
        let (na, nb) = (self.nodes[a.0].clone(), self.nodes[b.0].clone());
        let (prev, out) = self.out_and_prev(id);
        kernels::matmul(Self::in_slice(prev, &na), Self::in_slice(prev, &nb), out, m, k, n);
        self.finish(id)
    }

    /// a[m,k] * b^T where `b` is stored as [n,k].
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        let (m, k) = self.dims(a);
        let (n, k2) = self.dims(b);
        if k != k2 {
            return Err(DiffError::Shape {
                op: "matmul_nt",
                node: self.nodes.len(),
                info: format!("[{m}x{k}] * [{n}x{k2}]^T"),
            });
        }
        let rg = self.nodes[a.0].rg || self.nodes[b.0].rg;
        let id = self.push(Op::MatmulNt { a: a.0, b: b.0 }, m, n, 2, rg)?;
        let (na, nb) = (self.nodes[a.0].clone(), self.nodes[b.0].clone());
        let (prev, out) = self.out_and_prev(id);
        kernels::matmul_nt(Self::in_slice(prev, &na), Self::in_slice(prev, &nb), out, m, k, n);
        self.finish(id)
    }

    /// Dense layer: x[m,k] * w[k,n] + bias[n], optional fused relu.
    pub fn linear(&mut self, x: NodeId, w: NodeId, bias: NodeId, relu: bool) -> Result<NodeId, DiffError> {
        let (m, k) = self.dims(x);
        let (k2, n) = self.dims(w);
        let (br, bc) = self.dims(bias);
        if k != k2 || br != 1 || bc != n {
            return Err(DiffError::Shape {
                op: "linear",
                node: self.nodes.len(),
                info: format!("x[{m}x{k}] w[{k2}x{n}] bias[{br}x{bc}]"),
            });
        }
        let rg = self.nodes[x.0].rg || self.nodes[w.0].rg || self.nodes[bias.0].rg;
        let id = self.push(Op::Linear { x: x.0, w: w.0, bias: bias.0, relu }, m, n, 2, rg)?;
        let (nx, nw, nb) = (
            self.nodes[x.0].clone(),
            self.nodes[w.0].clone(),
            self.nodes[bias.0].clone(),
        );
        let (prev, out) = self.out_and_prev(id);
        let bv = Self::in_slice(prev, &nb);
        for i in 0..m {
            out[i * n..(i + 1) * n].copy_from_slice(bv);
        }
        kernels::matmul_acc(Self::in_slice(prev, &nx), Self::in_slice(prev, &nw), out, m, k, n);
        if relu {
            out.iter_mut().for_each(|v| {
                if *v < 0.0 {
                    *v = 0.0
                }
            });
        }
        self.finish(id)
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId, DiffError> {
        let (m, n) = self.dims(a);
        let rg = self.nodes[a.0].rg;
        let id = self.push(Op::Transpose { a: a.0 }, n, m, 2, rg)?;
        let na = self.nodes[a.0].clone();
        let (prev, out) = self.out_and_prev(id);
        let av = Self::in_slice(prev, &na);
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = av[i * n + j];
            }
        }
        self.finish(id)
    }

    fn broadcast_kind(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<Broadcast, DiffError> {
        let (m, n) = self.dims(a);
        let (bm, bn) = self.dims(b);
        if (bm, bn) == (m, n) {
            Ok(Broadcast::Same)
        } else if bm == 1 && bn == n {
            Ok(Broadcast::Row)
        } else if bm == 1 && bn == 1 {
            Ok(Broadcast::Scalar)
        } else {
            Err(DiffError::Shape {
                op,
                node: self.nodes.len(),
                info: format!("[{m}x{n}] vs [{bm}x{bn}]"),
            })
        }
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        let bc = self.broadcast_kind("add", a, b)?;
        let (m, n) = self.dims(a);
        let ndim = self.nodes[a.0].ndim;
        let rg = self.nodes[a.0].rg || self.nodes[b.0].rg;
        let id = self.push(Op::Add { a: a.0, b: b.0, bc }, m, n, ndim, rg)?;
        let (na, nb) = (self.nodes[a.0].clone(), self.nodes[b.0].clone());
        let (prev, out) = self.out_and_prev(id);
        let av = Self::in_slice(prev, &na);
        let bv = Self::in_slice(prev, &nb);
        match bc {
            Broadcast::Same => {
                for i in 0..m * n {
                    out[i] = av[i] + bv[i];
                }
            }
            Broadcast::Row => {
                for i in 0..m {
                    for j in 0..n {
                        out[i * n + j] = av[i * n + j] + bv[j];
                    }
                }
            }
            Broadcast::Scalar => {
                let s = bv[0];
                for i in 0..m * n {
                    out[i] = av[i] + s;
                }
            }
        }
        self.finish(id)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        let bc = self.broadcast_kind("mul", a, b)?;
        let (m, n) = self.dims(a);
        let ndim = self.nodes[a.0].ndim;
        let rg = self.nodes[a.0].rg || self.nodes[b.0].rg;
        let id = self.push(Op::Mul { a: a.0, b: b.0, bc }, m, n, ndim, rg)?;
        let (na, nb) = (self.nodes[a.0].clone(), self.nodes[b.0].clone());
        let (prev, out) = self.out_and_prev(id);
        let av = Self::in_slice(prev, &na);
        let bv = Self::in_slice(prev, &nb);
        match bc {
            Broadcast::Same => {
                for i in 0..m * n {
                    out[i] = av[i] * bv[i];
                }
            }
            Broadcast::Row => {
                for i in 0..m {
                    for j in 0..n {
                        out[i * n + j] = av[i * n + j] * bv[j];
                    }
                }
            }
            Broadcast::Scalar => {
                let s = bv[0];
                for i in 0..m * n {
                    out[i] = av[i] * s;
                }
            }
        }
        self.finish(id)
    }

    /// Multiply by a compile-time constant.
    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId, DiffError> {
        let (m, n) = self.dims(a);
        let ndim = self.nodes[a.0].ndim;
        let rg = self.nodes[a.0].rg;
        let id = self.push(Op::Scale { a: a.0, c }, m, n, ndim, rg)?;
        let na = self.nodes[a.0].clone();
        let (prev, out) = self.out_and_prev(id);
        let av = Self::in_slice(prev, &na);
        for i in 0..m * n {
            out[i] = av[i] * c;
        }
        self.finish(id)
    }

    fn unary(&mut self, op: Op, a: NodeId, f: impl Fn(f64) -> f64) -> Result<NodeId, DiffError> {
        let (m, n) = self.dims(a);
        let ndim = self.nodes[a.0].ndim;
        let rg = self.nodes[a.0].rg;
        let id = self.push(op, m, n, ndim, rg)?;
        let na = self.nodes[a.0].clone();
        let (prev, out) = self.out_and_prev(id);
        let av = Self::in_slice(prev, &na);
        for i in 0..m * n {
            out[i] = f(av[i]);
        }
        self.finish(id)
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId, DiffError> {
        self.unary(Op::Relu { a: a.0 }, a, |x| if x > 0.0 { x } else { 0.0 })
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId, DiffError> {
        self.unary(Op::Sigmoid { a: a.0 }, a, stable_sigmoid)
    }

    /// Natural logarithm (elementwise). Inputs must be positive.
    pub fn ln(&mut self, a: NodeId) -> Result<NodeId, DiffError> {
        self.unary(Op::Ln { a: a.0 }, a, f64::ln)
    }

    /// Row-wise softmax over the last axis.
    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId, DiffError> {
        let (m, n) = self.dims(a);
        let ndim = self.nodes[a.0].ndim;
        let rg = self.nodes[a.0].rg;
        let id = self.push(Op::Softmax { a: a.0 }, m, n, ndim, rg)?;
        let na = self.nodes[a.0].clone();
        let (prev, out) = self.out_and_prev(id);
        let av = Self::in_slice(prev, &na);
        for i in 0..m {
            let row = &av[i * n..(i + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for j in 0..n {
                let e = (row[j] - mx).exp();
                orow[j] = e;
                sum += e;
            }
            let inv = 1.0 / sum;
            orow.iter_mut().for_each(|v| *v *= inv);
        }
        self.finish(id)
    }

    /// Row-wise layer normalization over the last axis (no affine part):
    /// y = (x - mean) / sqrt(var + eps), with biased variance.
    pub fn layer_norm(&mut self, a: NodeId, eps: f64) -> Result<NodeId, DiffError> {
        let (m, n) = self.dims(a);
        let ndim = self.nodes[a.0].ndim;
        let rg = self.nodes[a.0].rg;
        let id = self.push(Op::LayerNorm { a: a.0, eps }, m, n, ndim, rg)?;
        let na = self.nodes[a.0].clone();
        let (prev, out) = self.out_and_prev(id);
        let av = Self::in_slice(prev, &na);
        for i in 0..m {
            let row = &av[i * n..(i + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for j in 0..n {
                orow[j] = (row[j] - mean) * inv;
            }
        }
        self.finish(id)
    }

    /// Concatenate 2-D inputs along the column axis.
    pub fn concat_cols(&mut self, inputs: &[NodeId]) -> Result<NodeId, DiffError> {
        if inputs.is_empty() {
            return Err(DiffError::Shape {
                op: "concat_cols",
                node: self.nodes.len(),
                info: "no inputs".into(),
            });
        }
        let (m, _) = self.dims(inputs[0]);
        let mut total = 0;
        for &i in inputs {
            let (mi, ni) = self.dims(i);
            if mi != m {
                return Err(DiffError::Shape {
                    op: "concat_cols",
                    node: self.nodes.len(),
                    info: format!("row mismatch {mi} vs {m}"),
                });
            }
            total += ni;
        }
        let rg = inputs.iter().any(|&i| self.nodes[i.0].rg);
        let ids: Vec<usize> = inputs.iter().map(|i| i.0).collect();
        let id = self.push(Op::ConcatCols { inputs: ids }, m, total, 2, rg)?;
        let parts: Vec<Node> = inputs.iter().map(|i| self.nodes[i.0].clone()).collect();
        let (prev, out) = self.out_and_prev(id);
        let mut col = 0;
        for p in &parts {
            let pv = Self::in_slice(prev, p);
            for i in 0..m {
                out[i * total + col..i * total + col + p.cols]
                    .copy_from_slice(&pv[i * p.cols..(i + 1) * p.cols]);
            }
            col += p.cols;
        }
        self.finish(id)
    }

    /// Columns [start, start+len) of a 2-D value.
    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId, DiffError> {
        let (m, n) = self.dims(a);
        if start + len > n {
            return Err(DiffError::Shape {
                op: "slice_cols",
                node: self.nodes.len(),
                info: format!("slice {start}..{} of {n} cols", start + len),
            });
        }
        let rg = self.nodes[a.0].rg;
        let id = self.push(Op::SliceCols { a: a.0, start }, m, len, 2, rg)?;
        let na = self.nodes[a.0].clone();
        let (prev, out) = self.out_and_prev(id);
        let av = Self::in_slice(prev, &na);
        for i in 0..m {
            out[i * len..(i + 1) * len].copy_from_slice(&av[i * n + start..i * n + start + len]);
        }
        self.finish(id)
    }

    /// Row gather: out[i, :] = a[idx[i], :].
    pub fn gather_rows(&mut self, a: NodeId, idx: &Arc<Vec<usize>>) -> Result<NodeId, DiffError> {
        let (m, n) = self.dims(a);
        if let Some(&bad) = idx.iter().find(|&&i| i >= m) {
            return Err(DiffError::Shape {
                op: "gather_rows",
                node: self.nodes.len(),
                info: format!("index {bad} out of {m} rows"),
            });
        }
        let rows = idx.len();
        let rg = self.nodes[a.0].rg;
        let id = self.push(Op::GatherRows { a: a.0, idx: Arc::clone(idx) }, rows, n, 2, rg)?;
        let na = self.nodes[a.0].clone();
        let (prev, out) = self.out_and_prev(id);
        let av = Self::in_slice(prev, &na);
        for (i, &r) in idx.iter().enumerate() {
            out[i * n..(i + 1) * n].copy_from_slice(&av[r * n..(r + 1) * n]);
        }
        self.finish(id)
    }

    /// Segment sum: out[r, :] = sum of a[i, :] over i with idx[i] == r.
    pub fn scatter_sum_rows(
        &mut self,
        a: NodeId,
        idx: &Arc<Vec<usize>>,
        rows: usize,
    ) -> Result<NodeId, DiffError> {
        let (m, n) = self.dims(a);
        if idx.len() != m {
            return Err(DiffError::Shape {
                op: "scatter_sum_rows",
                node: self.nodes.len(),
                info: format!("{} indices for {m} rows", idx.len()),
            });
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(DiffError::Shape {
                op: "scatter_sum_rows",
                node: self.nodes.len(),
                info: format!("target {bad} out of {rows} rows"),
            });
        }
        let rg = self.nodes[a.0].rg;
        let id = self.push(Op::ScatterSumRows { a: a.0, idx: Arc::clone(idx) }, rows, n, 2, rg)?;
        let na = self.nodes[a.0].clone();
        let (prev, out) = self.out_and_prev(id);
        let av = Self::in_slice(prev, &na);
        for (i, &r) in idx.iter().enumerate() {
            let src = &av[i * n..(i + 1) * n];
            let dst = &mut out[r * n..(r + 1) * n];
            for j in 0..n {
                dst[j] += src[j];
            }
        }
        self.finish(id)
    }

    /// Broadcast a row vector to `count` identical rows.
    pub fn repeat_row(&mut self, a: NodeId, count: usize) -> Result<NodeId, DiffError> {
        let (m, n) = self.dims(a);
        if m != 1 {
            return Err(DiffError::Shape {
                op: "repeat_row",
                node: self.nodes.len(),
                info: format!("expected a row vector, got [{m}x{n}]"),
            });
        }
        let rg = self.nodes[a.0].rg;
        let id = self.push(Op::RepeatRow { a: a.0 }, count, n, 2, rg)?;
        let na = self.nodes[a.0].clone();
        let (prev, out) = self.out_and_prev(id);
        let av = Self::in_slice(prev, &na);
        for i in 0..count {
            out[i * n..(i + 1) * n].copy_from_slice(av);
        }
        self.finish(id)
    }

    /// Fused per-edge input assembly for message networks:
    /// out[e, :] = [src[idx_src[e], :] ++ tgt[idx_tgt[e], :] ++ gamma].
    pub fn edge_concat(
        &mut self,
        src: NodeId,
        tgt: NodeId,
        gamma: NodeId,
        idx_src: &Arc<Vec<usize>>,
        idx_tgt: &Arc<Vec<usize>>,
    ) -> Result<NodeId, DiffError> {
        let (ns, ds) = self.dims(src);
        let (nt, dt) = self.dims(tgt);
        let (gm, dg) = self.dims(gamma);
        if gm != 1 || idx_src.len() != idx_tgt.len() {
            return Err(DiffError::Shape {
                op: "edge_concat",
                node: self.nodes.len(),
                info: format!(
                    "gamma [{gm}x{dg}], {} src vs {} tgt indices",
                    idx_src.len(),
                    idx_tgt.len()
                ),
            });
        }
        if idx_src.iter().any(|&i| i >= ns) || idx_tgt.iter().any(|&i| i >= nt) {
            return Err(DiffError::Shape {
                op: "edge_concat",
                node: self.nodes.len(),
                info: "edge index out of range".into(),
            });
        }
        let edges = idx_src.len();
        let cols = ds + dt + dg;
        let rg = self.nodes[src.0].rg || self.nodes[tgt.0].rg || self.nodes[gamma.0].rg;
        let id = self.push(
            Op::EdgeConcat {
                src: src.0,
                tgt: tgt.0,
                gamma: gamma.0,
                idx_src: Arc::clone(idx_src),
                idx_tgt: Arc::clone(idx_tgt),
            },
            edges,
            cols,
            2,
            rg,
        )?;
        let (nsrc, ntgt, ngam) = (
            self.nodes[src.0].clone(),
            self.nodes[tgt.0].clone(),
            self.nodes[gamma.0].clone(),
        );
        let (prev, out) = self.out_and_prev(id);
        let sv = Self::in_slice(prev, &nsrc);
        let tv = Self::in_slice(prev, &ntgt);
        let gv = Self::in_slice(prev, &ngam);
        for e in 0..edges {
            let row = &mut out[e * cols..(e + 1) * cols];
            row[..ds].copy_from_slice(&sv[idx_src[e] * ds..(idx_src[e] + 1) * ds]);
            row[ds..ds + dt].copy_from_slice(&tv[idx_tgt[e] * dt..(idx_tgt[e] + 1) * dt]);
            row[ds + dt..].copy_from_slice(gv);
        }
        self.finish(id)
    }

    /// Sum of all elements, as a scalar.
    pub fn sum_all(&mut self, a: NodeId) -> Result<NodeId, DiffError> {
        let rg = self.nodes[a.0].rg;
        let id = self.push(Op::SumAll { a: a.0 }, 1, 1, 1, rg)?;
        let na = self.nodes[a.0].clone();
        let (prev, out) = self.out_and_prev(id);
        out[0] = Self::in_slice(prev, &na).iter().sum();
        self.finish(id)
    }

    /// Reinterpret the element layout with a new (rows, cols).
    pub fn reshape(&mut self, a: NodeId, rows: usize, cols: usize) -> Result<NodeId, DiffError> {
        let (m, n) = self.dims(a);
        if m * n != rows * cols {
            return Err(DiffError::Shape {
                op: "reshape",
                node: self.nodes.len(),
                info: format!("[{m}x{n}] -> [{rows}x{cols}]"),
            });
        }
        let rg = self.nodes[a.0].rg;
        let id = self.push(Op::Reshape { a: a.0 }, rows, cols, 2, rg)?;
        let na = self.nodes[a.0].clone();
        let (prev, out) = self.out_and_prev(id);
        out.copy_from_slice(Self::in_slice(prev, &na));
        self.finish(id)
    }

    /// Mean binary cross entropy between targets in {0,1} and logits, where
    /// p(bit = 1) = sigmoid(logit). Numerically stable for large |logits|.
    pub fn bce_with_logits_mean(&mut self, logits: NodeId, targets: NodeId) -> Result<NodeId, DiffError> {
        let (m, n) = self.dims(logits);
        if self.dims(targets) != (m, n) {
            let (tm, tn) = self.dims(targets);
            return Err(DiffError::Shape {
                op: "bce_with_logits_mean",
                node: self.nodes.len(),
                info: format!("logits [{m}x{n}] vs targets [{tm}x{tn}]"),
            });
        }
        let rg = self.nodes[logits.0].rg || self.nodes[targets.0].rg;
        let id = self.push(
            Op::BceWithLogitsMean { logits: logits.0, targets: targets.0 },
            1,
            1,
            1,
            rg,
        )?;
        let (nl, nt) = (self.nodes[logits.0].clone(), self.nodes[targets.0].clone());
        let (prev, out) = self.out_and_prev(id);
        let lv = Self::in_slice(prev, &nl);
        let tv = Self::in_slice(prev, &nt);
        let mut acc = 0.0;
        for i in 0..m * n {
            let x = lv[i];
            let t = tv[i];
            // max(x,0) - x*t + ln(1 + exp(-|x|))
            acc += x.max(0.0) - x * t + (-x.abs()).exp().ln_1p();
        }
        out[0] = acc / (m * n) as f64;
        self.finish(id)
    }

    /// Mean of all elements (sum_all composed with scale).
    pub fn mean_all(&mut self, a: NodeId) -> Result<NodeId, DiffError> {
        let (m, n) = self.dims(a);
        let s = self.sum_all(a)?;
        self.scale(s, 1.0 / (m * n) as f64)
    }

    // ------------------------------------------------------------------
    // Backward
    // ------------------------------------------------------------------

    /// Reverse pass from a scalar root. Gradients accumulate for every node
    /// with `requires_grad` reachability; query them with `grad`/`grad_array`.
    pub fn backward(&mut self, root: NodeId) -> Result<(), DiffError> {
        let rn = &self.nodes[root.0];
        if rn.rows * rn.cols != 1 {
            return Err(DiffError::NonScalarRoot { node: root.0 });
        }
        if self.grads.len() < self.vals.len() {
            self.grads.resize(self.vals.len(), 0.0);
        }
        self.grad_ready.clear();
        self.grad_ready.resize(self.nodes.len(), false);
        let root_off = self.nodes[root.0].off;
        self.grads[root_off] = 1.0;
        self.grad_ready[root.0] = true;

        for i in (0..=root.0).rev() {
            if !self.grad_ready[i] || !self.nodes[i].rg {
                continue;
            }
            self.backprop_node(i);
        }
        Ok(())
    }

    /// Ensure the gradient region of node `j` is zero-initialized, then
    /// return (input grad slice, current node grad slice). `j` must precede
    /// `cur` on the tape, which holds for all inputs by construction.
    fn grad_pair(&mut self, j: usize, cur: usize) -> (&mut [f64], &[f64]) {
        debug_assert!(j < cur);
        let (joff, jlen) = {
            let n = &self.nodes[j];
            (n.off, n.rows * n.cols)
        };
        let (coff, clen) = {
            let n = &self.nodes[cur];
            (n.off, n.rows * n.cols)
        };
        if !self.grad_ready[j] {
            self.grads[joff..joff + jlen].iter_mut().for_each(|v| *v = 0.0);
            self.grad_ready[j] = true;
        }
        let (pre, tail) = self.grads.split_at_mut(coff);
        (&mut pre[joff..joff + jlen], &tail[..clen])
    }

    fn backprop_node(&mut self, i: usize) {
        let node = self.nodes[i].clone();
        let (m, n) = (node.rows, node.cols);
        match node.op {
            Op::Leaf => {}
            Op::Matmul { a, b } => {
                let (am, ak) = (self.nodes[a].rows, self.nodes[a].cols);
                if self.nodes[a].rg {
                    let bnode = self.nodes[b].clone();
                    let vals = std::mem::take(&mut self.vals);
                    let (ga, g) = self.grad_pair(a, i);
                    let bv = &vals[bnode.off..bnode.off + bnode.rows * bnode.cols];
                    // da += g * b^T ; b stored [k,n]
                    kernels::matmul_nt_acc(g, bv, ga, am, n, ak);
                    self.vals = vals;
                }
                if self.nodes[b].rg {
                    let anode = self.nodes[a].clone();
                    let vals = std::mem::take(&mut self.vals);
                    let (gb, g) = self.grad_pair(b, i);
                    let av = &vals[anode.off..anode.off + anode.rows * anode.cols];
                    // db += a^T * g
                    kernels::matmul_tn_acc(av, g, gb, am, ak, n);
                    self.vals = vals;
                }
            }
            Op::MatmulNt { a, b } => {
                let (am, ak) = (self.nodes[a].rows, self.nodes[a].cols);
                let bn = self.nodes[b].rows;
                if self.nodes[a].rg {
                    let bnode = self.nodes[b].clone();
                    let vals = std::mem::take(&mut self.vals);
                    let (ga, g) = self.grad_pair(a, i);
                    let bv = &vals[bnode.off..bnode.off + bnode.rows * bnode.cols];
                    // da += g[m,n] * b[n,k]
                    kernels::matmul_acc(g, bv, ga, am, bn, ak);
                    self.vals = vals;
                }
                if self.nodes[b].rg {
                    let anode = self.nodes[a].clone();
                    let vals = std::mem::take(&mut self.vals);
                    let (gb, g) = self.grad_pair(b, i);
                    let av = &vals[anode.off..anode.off + anode.rows * anode.cols];
                    // db += g^T[n,m] * a[m,k]
                    kernels::matmul_tn_acc(g, av, gb, am, bn, ak);
                    self.vals = vals;
                }
            }
            Op::Linear { x, w, bias, relu } => {
                let (xm, xk) = (self.nodes[x].rows, self.nodes[x].cols);
                // With relu, mask the upstream gradient in place once; the
                // masked values are correct for all three inputs.
                if relu {
                    let y = &self.vals[node.off..node.off + m * n];
                    let g = &mut self.grads[node.off..node.off + m * n];
                    for idx in 0..m * n {
                        if y[idx] <= 0.0 {
                            g[idx] = 0.0;
                        }
                    }
                }
                if self.nodes[x].rg {
                    let wnode = self.nodes[w].clone();
                    let vals = std::mem::take(&mut self.vals);
                    let (gx, g) = self.grad_pair(x, i);
                    let wv = &vals[wnode.off..wnode.off + wnode.rows * wnode.cols];
                    kernels::matmul_nt_acc(g, wv, gx, xm, n, xk);
                    self.vals = vals;
                }
                if self.nodes[w].rg {
                    let xnode = self.nodes[x].clone();
                    let vals = std::mem::take(&mut self.vals);
                    let (gw, g) = self.grad_pair(w, i);
                    let xv = &vals[xnode.off..xnode.off + xnode.rows * xnode.cols];
                    kernels::matmul_tn_acc(xv, g, gw, xm, xk, n);
                    self.vals = vals;
                }
                if self.nodes[bias].rg {
                    let (gb, g) = self.grad_pair(bias, i);
                    for r in 0..xm {
                        for j in 0..n {
                            gb[j] += g[r * n + j];
                        }
                    }
                }
            }
            Op::Transpose { a } => {
                if self.nodes[a].rg {
                    let (ga, g) = self.grad_pair(a, i);
                    // node is [n_a_cols x n_a_rows]; g layout [m,n], a is [n,m]
                    for r in 0..m {
                        for c in 0..n {
                            ga[c * m + r] += g[r * n + c];
                        }
                    }
                }
            }
            Op::Add { a, b, bc } => {
                if self.nodes[a].rg {
                    let (ga, g) = self.grad_pair(a, i);
                    for idx in 0..m * n {
                        ga[idx] += g[idx];
                    }
                }
                if self.nodes[b].rg {
                    let (gb, g) = self.grad_pair(b, i);
                    match bc {
                        Broadcast::Same => {
                            for idx in 0..m * n {
                                gb[idx] += g[idx];
                            }
                        }
                        Broadcast::Row => {
                            for r in 0..m {
                                for c in 0..n {
                                    gb[c] += g[r * n + c];
                                }
                            }
                        }
                        Broadcast::Scalar => {
                            gb[0] += g.iter().sum::<f64>();
                        }
                    }
                }
            }
            Op::Mul { a, b, bc } => {
                let (anode, bnode) = (self.nodes[a].clone(), self.nodes[b].clone());
                if self.nodes[a].rg {
                    let vals = std::mem::take(&mut self.vals);
                    let (ga, g) = self.grad_pair(a, i);
                    let bv = &vals[bnode.off..bnode.off + bnode.rows * bnode.cols];
                    match bc {
                        Broadcast::Same => {
                            for idx in 0..m * n {
                                ga[idx] += g[idx] * bv[idx];
                            }
                        }
                        Broadcast::Row => {
                            for r in 0..m {
                                for c in 0..n {
                                    ga[r * n + c] += g[r * n + c] * bv[c];
                                }
                            }
                        }
                        Broadcast::Scalar => {
                            let s = bv[0];
                            for idx in 0..m * n {
                                ga[idx] += g[idx] * s;
                            }
                        }
                    }
                    self.vals = vals;
                }
                if self.nodes[b].rg {
                    let vals = std::mem::take(&mut self.vals);
                    let (gb, g) = self.grad_pair(b, i);
                    let av = &vals[anode.off..anode.off + anode.rows * anode.cols];
                    match bc {
                        Broadcast::Same => {
                            for idx in 0..m * n {
                                gb[idx] += g[idx] * av[idx];
                            }
                        }
                        Broadcast::Row => {
                            for r in 0..m {
                                for c in 0..n {
                                    gb[c] += g[r * n + c] * av[r * n + c];
                                }
                            }
                        }
                        Broadcast::Scalar => {
                            let mut s = 0.0;
                            for idx in 0..m * n {
                                s += g[idx] * av[idx];
                            }
                            gb[0] += s;
                        }
                    }
                    self.vals = vals;
                }
            }
            Op::Scale { a, c } => {
                if self.nodes[a].rg {
                    let (ga, g) = self.grad_pair(a, i);
                    for idx in 0..m * n {
                        ga[idx] += g[idx] * c;
                    }
                }
            }
            Op::Relu { a } => {
                if self.nodes[a].rg {
                    let vals = std::mem::take(&mut self.vals);
                    let (ga, g) = self.grad_pair(a, i);
                    let y = &vals[node.off..node.off + m * n];
                    for idx in 0..m * n {
                        if y[idx] > 0.0 {
                            ga[idx] += g[idx];
                        }
                    }
                    self.vals = vals;
                }
            }
            Op::Sigmoid { a } => {
                if self.nodes[a].rg {
                    let vals = std::mem::take(&mut self.vals);
                    let (ga, g) = self.grad_pair(a, i);
                    let y = &vals[node.off..node.off + m * n];
                    for idx in 0..m * n {
                        ga[idx] += g[idx] * y[idx] * (1.0 - y[idx]);
                    }
                    self.vals = vals;
                }
            }
            Op::Ln { a } => {
                if self.nodes[a].rg {
                    let anode = self.nodes[a].clone();
                    let vals = std::mem::take(&mut self.vals);
                    let (ga, g) = self.grad_pair(a, i);
                    let x = &vals[anode.off..anode.off + m * n];
                    for idx in 0..m * n {
                        ga[idx] += g[idx] / x[idx];
                    }
                    self.vals = vals;
                }
            }
            Op::Softmax { a } => {
                if self.nodes[a].rg {
                    let vals = std::mem::take(&mut self.vals);
                    let (ga, g) = self.grad_pair(a, i);
                    let y = &vals[node.off..node.off + m * n];
                    for r in 0..m {
                        let yr = &y[r * n..(r + 1) * n];
                        let gr = &g[r * n..(r + 1) * n];
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        let gar = &mut ga[r * n..(r + 1) * n];
                        for c in 0..n {
                            gar[c] += yr[c] * (gr[c] - dot);
                        }
                    }
                    self.vals = vals;
                }
            }
            Op::LayerNorm { a, eps } => {
                if self.nodes[a].rg {
                    let anode = self.nodes[a].clone();
                    let vals = std::mem::take(&mut self.vals);
                    let (ga, g) = self.grad_pair(a, i);
                    let x = &vals[anode.off..anode.off + m * n];
                    let y = &vals[node.off..node.off + m * n];
                    for r in 0..m {
                        let xr = &x[r * n..(r + 1) * n];
                        let yr = &y[r * n..(r + 1) * n];
                        let gr = &g[r * n..(r + 1) * n];
                        let mean = xr.iter().sum::<f64>() / n as f64;
                        let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
                        let inv = 1.0 / (var + eps).sqrt();
                        let gmean = gr.iter().sum::<f64>() / n as f64;
                        let gydot = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                        let gar = &mut ga[r * n..(r + 1) * n];
                        for c in 0..n {
                            gar[c] += inv * (gr[c] - gmean - yr[c] * gydot);
                        }
                    }
                    self.vals = vals;
                }
            }
            Op::ConcatCols { ref inputs } => {
                let mut col = 0;
                for &a in inputs {
                    let acols = self.nodes[a].cols;
                    if self.nodes[a].rg {
                        let (ga, g) = self.grad_pair(a, i);
                        for r in 0..m {
                            for c in 0..acols {
                                ga[r * acols + c] += g[r * n + col + c];
                            }
                        }
                    }
                    col += acols;
                }
            }
            Op::SliceCols { a, start } => {
                if self.nodes[a].rg {
                    let an = self.nodes[a].cols;
                    let (ga, g) = self.grad_pair(a, i);
                    for r in 0..m {
                        for c in 0..n {
                            ga[r * an + start + c] += g[r * n + c];
                        }
                    }
                }
            }
            Op::GatherRows { a, ref idx } => {
                if self.nodes[a].rg {
                    let idx = Arc::clone(idx);
                    let (ga, g) = self.grad_pair(a, i);
                    for (r, &src) in idx.iter().enumerate() {
                        for c in 0..n {
                            ga[src * n + c] += g[r * n + c];
                        }
                    }
                }
            }
            Op::ScatterSumRows { a, ref idx } => {
                if self.nodes[a].rg {
                    let idx = Arc::clone(idx);
                    let (ga, g) = self.grad_pair(a, i);
                    for (r, &dst) in idx.iter().enumerate() {
                        for c in 0..n {
                            ga[r * n + c] += g[dst * n + c];
                        }
                    }
                }
            }
            Op::RepeatRow { a } => {
                if self.nodes[a].rg {
                    let (ga, g) = self.grad_pair(a, i);
                    for r in 0..m {
                        for c in 0..n {
                            ga[c] += g[r * n + c];
                        }
                    }
                }
            }
            Op::EdgeConcat { src, tgt, gamma, ref idx_src, ref idx_tgt } => {
                let ds = self.nodes[src].cols;
                let dt = self.nodes[tgt].cols;
                let dg = self.nodes[gamma].cols;
                if self.nodes[src].rg {
                    let idx = Arc::clone(idx_src);
                    let (gs, g) = self.grad_pair(src, i);
                    for (e, &r) in idx.iter().enumerate() {
                        let row = &g[e * n..e * n + ds];
                        let dst = &mut gs[r * ds..(r + 1) * ds];
                        for c in 0..ds {
                            dst[c] += row[c];
                        }
                    }
                }
                if self.nodes[tgt].rg {
                    let idx = Arc::clone(idx_tgt);
                    let (gt, g) = self.grad_pair(tgt, i);
                    for (e, &r) in idx.iter().enumerate() {
                        let row = &g[e * n + ds..e * n + ds + dt];
                        let dst = &mut gt[r * dt..(r + 1) * dt];
                        for c in 0..dt {
                            dst[c] += row[c];
                        }
                    }
                }
                if self.nodes[gamma].rg {
                    let (gg, g) = self.grad_pair(gamma, i);
                    for e in 0..m {
                        let row = &g[e * n + ds + dt..(e + 1) * n];
                        for c in 0..dg {
                            gg[c] += row[c];
                        }
                    }
                }
            }
            Op::SumAll { a } => {
                if self.nodes[a].rg {
                    let (ga, g) = self.grad_pair(a, i);
                    let g0 = g[0];
                    ga.iter_mut().for_each(|v| *v += g0);
                }
            }
            Op::Reshape { a } => {
                if self.nodes[a].rg {
                    let (ga, g) = self.grad_pair(a, i);
                    for idx in 0..ga.len() {
                        ga[idx] += g[idx];
                    }
                }
            }
            Op::BceWithLogitsMean { logits, targets } => {
                if self.nodes[logits].rg {
                    let (lnode, tnode) = (self.nodes[logits].clone(), self.nodes[targets].clone());
                    let count = (lnode.rows * lnode.cols) as f64;
                    let vals = std::mem::take(&mut self.vals);
                    let (gl, g) = self.grad_pair(logits, i);
                    let lv = &vals[lnode.off..lnode.off + lnode.rows * lnode.cols];
                    let tv = &vals[tnode.off..tnode.off + tnode.rows * tnode.cols];
                    let g0 = g[0] / count;
                    for idx in 0..lv.len() {
                        gl[idx] += g0 * (stable_sigmoid(lv[idx]) - tv[idx]);
                    }
                    self.vals = vals;
                }
            }
        }
    }
}

#[inline]
pub(crate) fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
