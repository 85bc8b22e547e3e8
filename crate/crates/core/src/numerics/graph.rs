//! Reverse-mode autodiff tape.
//!
//! A [`Graph`] records one forward computation as a flat list of nodes in
//! topological order; [`Graph::backward`] is a single reverse sweep that
//! pushes gradients from a scalar loss to every parameter leaf. Graphs are
//! built fresh per step and dropped afterwards — parameters live outside as
//! plain [`Tensor`]s and are re-registered each step.
//!
//! Shape misuse between internal ops is a programmer error and panics; the
//! operations with user-reachable contracts (`matmul`, `conv1d_same`,
//! `layer_norm`, `avg_pool1d_same`, `dropout`) return `Result` instead.

use crate::error::{Error, Result};
use crate::numerics::{avg_pool_same_into, gelu_grad_scalar, gelu_scalar, matmul_into, Tensor};
use crate::rng::RngHandle;

/// Handle to a node in one [`Graph`]. Only valid for the graph it came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    AddScalar(NodeId),
    MulScalar(NodeId, f64),
    /// y = c - x
    SubFromScalar(NodeId),
    /// x[r,c] + row[c]
    AddRow(NodeId, NodeId),
    AddN(Vec<NodeId>),
    Matmul(NodeId, NodeId),
    Transpose(NodeId),
    Reshape(NodeId),
    /// rows start..end of a 2-D input
    SliceRows(NodeId, usize, usize),
    ConcatRows(Vec<NodeId>),
    ConcatCols(NodeId, NodeId),
    Gelu(NodeId),
    Sigmoid(NodeId),
    Exp(NodeId),
    Clamp(NodeId, f64, f64),
    LayerNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        eps: f64,
    },
    Conv1dSame {
        x: NodeId,
        w: NodeId,
        b: NodeId,
        pad: usize,
    },
    AvgPool1dSame(NodeId, usize),
    /// mean over axis 0 of a 2-D input: [l,d] -> [d]
    MeanRows(NodeId),
    /// element mask holds 0.0 or 1/(1-p)
    Dropout(NodeId, Vec<f64>),
    Sum(NodeId),
    Mean(NodeId),
    /// mean over rows of -log softmax(logits)[label]
    CrossEntropy(NodeId, Vec<usize>),
}

struct Node {
    data: Vec<f64>,
    shape: Vec<usize>,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
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

    fn push(&mut self, data: Vec<f64>, shape: Vec<usize>, op: Op, needs_grad: bool) -> NodeId {
        debug_assert_eq!(data.len(), shape.iter().product::<usize>());
        self.nodes.push(Node {
            data,
            shape,
            op,
            needs_grad,
        });
        self.grads.push(None);
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    // ── leaves ───────────────────────────────────────────────────────

    /// Constant leaf: gradients never flow into it.
    pub fn leaf(&mut self, t: &Tensor) -> NodeId {
        self.push(t.data.clone(), t.shape.clone(), Op::Leaf, false)
    }

    pub fn leaf_from(&mut self, data: Vec<f64>, shape: &[usize]) -> NodeId {
        self.push(data, shape.to_vec(), Op::Leaf, false)
    }

    pub fn scalar_leaf(&mut self, v: f64) -> NodeId {
        self.push(vec![v], vec![1], Op::Leaf, false)
    }

    /// Trainable leaf: backward accumulates a gradient for it.
    pub fn param(&mut self, t: &Tensor) -> NodeId {
        self.push(t.data.clone(), t.shape.clone(), Op::Leaf, true)
    }

    // ── accessors ────────────────────────────────────────────────────

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].data
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn to_tensor(&self, id: NodeId) -> Tensor {
        Tensor {
            shape: self.nodes[id.0].shape.clone(),
            data: self.nodes[id.0].data.clone(),
            grad: None,
            requires_grad: false,
        }
    }

    /// Gradient of the last backward target w.r.t. this node, if any flowed.
    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.grads[id.0].as_deref()
    }

    // ── elementwise & scalar ops ─────────────────────────────────────

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.shape(a), self.shape(b), "add: shape mismatch");
        let data: Vec<f64> = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        let ng = self.needs(a) || self.needs(b);
        self.push(data, shape, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.shape(a), self.shape(b), "sub: shape mismatch");
        let data: Vec<f64> = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(x, y)| x - y)
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        let ng = self.needs(a) || self.needs(b);
        self.push(data, shape, Op::Sub(a, b), ng)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.shape(a), self.shape(b), "mul: shape mismatch");
        let data: Vec<f64> = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        let ng = self.needs(a) || self.needs(b);
        self.push(data, shape, Op::Mul(a, b), ng)
    }

    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> NodeId {
        let data: Vec<f64> = self.nodes[a.0].data.iter().map(|x| x + c).collect();
        let shape = self.nodes[a.0].shape.clone();
        let ng = self.needs(a);
        self.push(data, shape, Op::AddScalar(a), ng)
    }

    pub fn mul_scalar(&mut self, a: NodeId, c: f64) -> NodeId {
        let data: Vec<f64> = self.nodes[a.0].data.iter().map(|x| x * c).collect();
        let shape = self.nodes[a.0].shape.clone();
        let ng = self.needs(a);
        self.push(data, shape, Op::MulScalar(a, c), ng)
    }

    /// `c - x` elementwise (e.g. `1 - gate`).
    pub fn sub_from_scalar(&mut self, c: f64, a: NodeId) -> NodeId {
        let data: Vec<f64> = self.nodes[a.0].data.iter().map(|x| c - x).collect();
        let shape = self.nodes[a.0].shape.clone();
        let ng = self.needs(a);
        self.push(data, shape, Op::SubFromScalar(a), ng)
    }

    /// Broadcast a `[c]` row vector over every row of a `[r,c]` matrix.
    pub fn add_row(&mut self, x: NodeId, row: NodeId) -> NodeId {
        let (r, c) = self.dims2(x);
        assert_eq!(self.shape(row), &[c], "add_row: row length mismatch");
        let mut data = self.nodes[x.0].data.clone();
        for i in 0..r {
            for j in 0..c {
                data[i * c + j] += self.nodes[row.0].data[j];
            }
        }
        let ng = self.needs(x) || self.needs(row);
        self.push(data, vec![r, c], Op::AddRow(x, row), ng)
    }

    /// Sum of same-shaped nodes.
    pub fn add_n(&mut self, items: &[NodeId]) -> NodeId {
        assert!(!items.is_empty(), "add_n: empty input");
        let shape = self.nodes[items[0].0].shape.clone();
        let mut data = vec![0.0; self.nodes[items[0].0].data.len()];
        let mut ng = false;
        for &id in items {
            assert_eq!(self.shape(id), &shape[..], "add_n: shape mismatch");
            for (d, v) in data.iter_mut().zip(&self.nodes[id.0].data) {
                *d += v;
            }
            ng |= self.needs(id);
        }
        self.push(data, shape, Op::AddN(items.to_vec()), ng)
    }

    // ── linear algebra & shape ───────────────────────────────────────

    fn dims2(&self, id: NodeId) -> (usize, usize) {
        let s = self.shape(id);
        assert_eq!(s.len(), 2, "expected 2-D tensor, got shape {:?}", s);
        (s[0], s[1])
    }

    /// Standard matrix product `[m,k] @ [k,n] -> [m,n]`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        if sa.len() != 2 || sb.len() != 2 {
            return Err(Error::Dim(format!(
                "matmul requires 2-D operands, got {:?} and {:?}",
                sa, sb
            )));
        }
        let (m, k) = (sa[0], sa[1]);
        let (k2, n) = (sb[0], sb[1]);
        if k != k2 {
            return Err(Error::Dim(format!(
                "matmul inner extents disagree: {:?} vs {:?}",
                sa, sb
            )));
        }
        let mut data = vec![0.0; m * n];
        matmul_into(&self.nodes[a.0].data, &self.nodes[b.0].data, &mut data, m, k, n);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(data, vec![m, n], Op::Matmul(a, b), ng))
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let (r, c) = self.dims2(a);
        let src = &self.nodes[a.0].data;
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = src[i * c + j];
            }
        }
        let ng = self.needs(a);
        self.push(data, vec![c, r], Op::Transpose(a), ng)
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> NodeId {
        assert_eq!(
            self.nodes[a.0].data.len(),
            shape.iter().product::<usize>(),
            "reshape: numel mismatch"
        );
        let data = self.nodes[a.0].data.clone();
        let ng = self.needs(a);
        self.push(data, shape.to_vec(), Op::Reshape(a), ng)
    }

    /// Rows `start..end` of a 2-D node.
    pub fn slice_rows(&mut self, a: NodeId, start: usize, end: usize) -> NodeId {
        let (r, c) = self.dims2(a);
        assert!(start <= end && end <= r, "slice_rows: bad range");
        let data = self.nodes[a.0].data[start * c..end * c].to_vec();
        let ng = self.needs(a);
        self.push(data, vec![end - start, c], Op::SliceRows(a, start, end), ng)
    }

    /// Stack 2-D nodes with equal column counts along axis 0.
    pub fn concat_rows(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty(), "concat_rows: empty input");
        let (_, c) = self.dims2(parts[0]);
        let mut data = Vec::new();
        let mut rows = 0;
        let mut ng = false;
        for &p in parts {
            let (r, pc) = self.dims2(p);
            assert_eq!(pc, c, "concat_rows: column mismatch");
            data.extend_from_slice(&self.nodes[p.0].data);
            rows += r;
            ng |= self.needs(p);
        }
        self.push(data, vec![rows, c], Op::ConcatRows(parts.to_vec()), ng)
    }

    /// `[r,c1] ++ [r,c2] -> [r, c1+c2]` per row.
    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (r, c1) = self.dims2(a);
        let (r2, c2) = self.dims2(b);
        assert_eq!(r, r2, "concat_cols: row mismatch");
        let mut data = Vec::with_capacity(r * (c1 + c2));
        for i in 0..r {
            data.extend_from_slice(&self.nodes[a.0].data[i * c1..(i + 1) * c1]);
            data.extend_from_slice(&self.nodes[b.0].data[i * c2..(i + 1) * c2]);
        }
        let ng = self.needs(a) || self.needs(b);
        self.push(data, vec![r, c1 + c2], Op::ConcatCols(a, b), ng)
    }

    // ── nonlinearities ───────────────────────────────────────────────

    /// Exact erf-based GELU.
    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let data: Vec<f64> = self.nodes[a.0].data.iter().map(|&x| gelu_scalar(x)).collect();
        let shape = self.nodes[a.0].shape.clone();
        let ng = self.needs(a);
        self.push(data, shape, Op::Gelu(a), ng)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let data: Vec<f64> = self.nodes[a.0]
            .data
            .iter()
            .map(|&x| 1.0 / (1.0 + (-x).exp()))
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        let ng = self.needs(a);
        self.push(data, shape, Op::Sigmoid(a), ng)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let data: Vec<f64> = self.nodes[a.0].data.iter().map(|&x| x.exp()).collect();
        let shape = self.nodes[a.0].shape.clone();
        let ng = self.needs(a);
        self.push(data, shape, Op::Exp(a), ng)
    }

    /// Elementwise clamp; gradient passes only strictly inside the range.
    pub fn clamp(&mut self, a: NodeId, lo: f64, hi: f64) -> NodeId {
        let data: Vec<f64> = self.nodes[a.0].data.iter().map(|&x| x.clamp(lo, hi)).collect();
        let shape = self.nodes[a.0].shape.clone();
        let ng = self.needs(a);
        self.push(data, shape, Op::Clamp(a, lo, hi), ng)
    }

    // ── structured ops ───────────────────────────────────────────────

    /// Per-row normalization over the last axis, then affine with
    /// `gamma`/`beta` of length D.
    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, eps: f64) -> Result<NodeId> {
        let xs = self.shape(x).to_vec();
        let d = *xs.last().ok_or_else(|| Error::Dim("layer_norm on 0-D tensor".into()))?;
        if d == 1 && eps == 0.0 {
            return Err(Error::Numeric(
                "layer_norm: degenerate variance (last axis extent 1 with eps 0)".into(),
            ));
        }
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(Error::Dim(format!(
                "layer_norm: gamma/beta must have shape [{}], got {:?}/{:?}",
                d,
                self.shape(gamma),
                self.shape(beta)
            )));
        }
        let rows = self.nodes[x.0].data.len() / d;
        let mut data = vec![0.0; rows * d];
        for r in 0..rows {
            let xi = &self.nodes[x.0].data[r * d..(r + 1) * d];
            let mean = xi.iter().sum::<f64>() / d as f64;
            let var = xi.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv_std = 1.0 / (var + eps).sqrt();
            for j in 0..d {
                data[r * d + j] = (xi[j] - mean) * inv_std * self.nodes[gamma.0].data[j]
                    + self.nodes[beta.0].data[j];
            }
        }
        let ng = self.needs(x) || self.needs(gamma) || self.needs(beta);
        Ok(self.push(data, xs, Op::LayerNorm { x, gamma, beta, eps }, ng))
    }

    /// Length-preserving 1-D cross-correlation with zero padding.
    /// `x: [l, c_in]`, `w: [c_out, c_in, k]`, `b: [c_out]`, `k` odd and
    /// `pad == (k-1)/2`.
    pub fn conv1d_same(&mut self, x: NodeId, w: NodeId, b: NodeId, pad: usize) -> Result<NodeId> {
        let (l, c_in) = {
            let s = self.shape(x);
            if s.len() != 2 {
                return Err(Error::Dim(format!("conv1d_same: x must be 2-D, got {:?}", s)));
            }
            (s[0], s[1])
        };
        let ws = self.shape(w).to_vec();
        if ws.len() != 3 || ws[1] != c_in {
            return Err(Error::Dim(format!(
                "conv1d_same: weight shape {:?} incompatible with input channels {}",
                ws, c_in
            )));
        }
        let (c_out, k) = (ws[0], ws[2]);
        if k % 2 == 0 || pad != (k - 1) / 2 {
            return Err(Error::Config(format!(
                "conv1d_same: kernel {} must be odd with padding {} == (k-1)/2",
                k, pad
            )));
        }
        if self.shape(b) != [c_out] {
            return Err(Error::Dim("conv1d_same: bias length mismatch".into()));
        }
        let xd = &self.nodes[x.0].data;
        let wd = &self.nodes[w.0].data;
        let bd = &self.nodes[b.0].data;
        let mut data = vec![0.0; l * c_out];
        for t in 0..l {
            for o in 0..c_out {
                let mut s = bd[o];
                for kk in 0..k {
                    let ti = t as isize + kk as isize - pad as isize;
                    if ti < 0 || ti >= l as isize {
                        continue;
                    }
                    let ti = ti as usize;
                    for c in 0..c_in {
                        s += xd[ti * c_in + c] * wd[(o * c_in + c) * k + kk];
                    }
                }
                data[t * c_out + o] = s;
            }
        }
        let ng = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(data, vec![l, c_out], Op::Conv1dSame { x, w, b, pad }, ng))
    }

    /// Sliding mean over axis 0 with replicate padding; length preserved.
    pub fn avg_pool1d_same(&mut self, x: NodeId, kernel: usize) -> Result<NodeId> {
        let (l, c) = self.dims2(x);
        if kernel % 2 == 0 {
            return Err(Error::Config(format!(
                "avg_pool1d_same: kernel {} must be odd",
                kernel
            )));
        }
        if kernel > 2 * l - 1 {
            return Err(Error::Config(format!(
                "avg_pool1d_same: kernel {} exceeds 2*len-1 = {}",
                kernel,
                2 * l - 1
            )));
        }
        let mut data = vec![0.0; l * c];
        avg_pool_same_into(&self.nodes[x.0].data, l, c, kernel, &mut data);
        let ng = self.needs(x);
        Ok(self.push(data, vec![l, c], Op::AvgPool1dSame(x, kernel), ng))
    }

    /// Mean over the time axis: `[l,d] -> [d]`.
    pub fn mean_rows(&mut self, x: NodeId) -> NodeId {
        let (l, d) = self.dims2(x);
        let mut data = vec![0.0; d];
        for r in 0..l {
            for j in 0..d {
                data[j] += self.nodes[x.0].data[r * d + j];
            }
        }
        for v in data.iter_mut() {
            *v /= l as f64;
        }
        let ng = self.needs(x);
        self.push(data, vec![d], Op::MeanRows(x), ng)
    }

    /// Inverted dropout: training keeps each element with probability
    /// `1 - p`, scaling survivors by `1/(1-p)`. Eval (or `p == 0`) returns
    /// the input node unchanged — the exact identity.
    pub fn dropout(
        &mut self,
        x: NodeId,
        p: f64,
        training: bool,
        rng: &mut RngHandle,
    ) -> Result<NodeId> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!(
                "dropout probability must satisfy 0 <= p < 1, got {}",
                p
            )));
        }
        if !training || p == 0.0 {
            return Ok(x);
        }
        let scale = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..self.nodes[x.0].data.len())
            .map(|_| if rng.bernoulli(p) { 0.0 } else { scale })
            .collect();
        let data: Vec<f64> = self.nodes[x.0]
            .data
            .iter()
            .zip(&mask)
            .map(|(v, m)| v * m)
            .collect();
        let shape = self.nodes[x.0].shape.clone();
        let ng = self.needs(x);
        Ok(self.push(data, shape, Op::Dropout(x, mask), ng))
    }

    // ── reductions & losses ──────────────────────────────────────────

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s: f64 = self.nodes[a.0].data.iter().sum();
        let ng = self.needs(a);
        self.push(vec![s], vec![1], Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let n = self.nodes[a.0].data.len();
        let s: f64 = self.nodes[a.0].data.iter().sum();
        let ng = self.needs(a);
        self.push(vec![s / n as f64], vec![1], Op::Mean(a), ng)
    }

    /// Mean cross-entropy of `logits: [b, k]` against integer labels,
    /// computed with a numerically stable log-sum-exp.
    pub fn cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> NodeId {
        let (b, k) = self.dims2(logits);
        assert_eq!(labels.len(), b, "cross_entropy: label count mismatch");
        let mut total = 0.0;
        for (i, &lab) in labels.iter().enumerate() {
            assert!(lab < k, "cross_entropy: label {} out of range", lab);
            let row = &self.nodes[logits.0].data[i * k..(i + 1) * k];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln() + mx;
            total -= row[lab] - lse;
        }
        let ng = self.needs(logits);
        self.push(
            vec![total / b as f64],
            vec![1],
            Op::CrossEntropy(logits, labels.to_vec()),
            ng,
        )
    }

    // ── backward ─────────────────────────────────────────────────────

    fn acc(&mut self, id: NodeId, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[id.0].needs_grad {
            return;
        }
        if self.grads[id.0].is_none() {
            self.grads[id.0] = Some(vec![0.0; self.nodes[id.0].data.len()]);
        }
        f(self.grads[id.0].as_mut().unwrap());
    }

    /// Reverse sweep from a scalar node. Gradients of earlier backward calls
    /// on the same graph are cleared first.
    pub fn backward(&mut self, loss: NodeId) {
        assert_eq!(
            self.nodes[loss.0].data.len(),
            1,
            "backward target must be scalar"
        );
        for g in self.grads.iter_mut() {
            *g = None;
        }
        self.grads[loss.0] = Some(vec![1.0]);

        for i in (0..self.nodes.len()).rev() {
            if self.grads[i].is_none() || !self.nodes[i].needs_grad {
                continue;
            }
            let g = self.grads[i].clone().unwrap();
            // Detach the op so gradient pushes can borrow `self` mutably;
            // restored below since backward may run more than once per graph.
            let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
            match &op {
                Op::Leaf => {}
                &Op::Add(a, b) => {
                    self.acc(a, |t| t.iter_mut().zip(&g).for_each(|(x, y)| *x += y));
                    self.acc(b, |t| t.iter_mut().zip(&g).for_each(|(x, y)| *x += y));
                }
                &Op::Sub(a, b) => {
                    self.acc(a, |t| t.iter_mut().zip(&g).for_each(|(x, y)| *x += y));
                    self.acc(b, |t| t.iter_mut().zip(&g).for_each(|(x, y)| *x -= y));
                }
                &Op::Mul(a, b) => {
                    let bd = self.nodes[b.0].data.clone();
                    let ad = self.nodes[a.0].data.clone();
                    self.acc(a, |t| {
                        for ((x, y), z) in t.iter_mut().zip(&g).zip(&bd) {
                            *x += y * z;
                        }
                    });
                    self.acc(b, |t| {
                        for ((x, y), z) in t.iter_mut().zip(&g).zip(&ad) {
                            *x += y * z;
                        }
                    });
                }
                &Op::AddScalar(a) => {
                    self.acc(a, |t| t.iter_mut().zip(&g).for_each(|(x, y)| *x += y));
                }
                &Op::MulScalar(a, c) => {
                    self.acc(a, |t| t.iter_mut().zip(&g).for_each(|(x, y)| *x += c * y));
                }
                &Op::SubFromScalar(a) => {
                    self.acc(a, |t| t.iter_mut().zip(&g).for_each(|(x, y)| *x -= y));
                }
                &Op::AddRow(x, row) => {
                    let c = self.nodes[row.0].data.len();
                    self.acc(x, |t| t.iter_mut().zip(&g).for_each(|(a, b)| *a += b));
                    self.acc(row, |t| {
                        for (idx, gv) in g.iter().enumerate() {
                            t[idx % c] += gv;
                        }
                    });
                }
                Op::AddN(items) => {
                    for &id in items.clone().iter() {
                        self.acc(id, |t| t.iter_mut().zip(&g).for_each(|(x, y)| *x += y));
                    }
                }
                &Op::Matmul(a, b) => {
                    let (m, k) = (self.nodes[a.0].shape[0], self.nodes[a.0].shape[1]);
                    let n = self.nodes[b.0].shape[1];
                    // dA = g @ B^T
                    if self.needs(a) {
                        let bd = &self.nodes[b.0].data;
                        let mut bt = vec![0.0; k * n];
                        for p in 0..k {
                            for j in 0..n {
                                bt[j * k + p] = bd[p * n + j];
                            }
                        }
                        let mut da = vec![0.0; m * k];
                        matmul_into(&g, &bt, &mut da, m, n, k);
                        self.acc(a, |t| t.iter_mut().zip(&da).for_each(|(x, y)| *x += y));
                    }
                    // dB = A^T @ g
                    if self.needs(b) {
                        let ad = &self.nodes[a.0].data;
                        let mut at = vec![0.0; k * m];
                        for ii in 0..m {
                            for p in 0..k {
                                at[p * m + ii] = ad[ii * k + p];
                            }
                        }
                        let mut db = vec![0.0; k * n];
                        matmul_into(&at, &g, &mut db, k, m, n);
                        self.acc(b, |t| t.iter_mut().zip(&db).for_each(|(x, y)| *x += y));
                    }
                }
                &Op::Transpose(a) => {
                    let (c, r) = (self.nodes[i].shape[0], self.nodes[i].shape[1]);
                    // output is [c,r]; input was [r,c]
                    let mut da = vec![0.0; r * c];
                    for j in 0..c {
                        for ii in 0..r {
                            da[ii * c + j] = g[j * r + ii];
                        }
                    }
                    self.acc(a, |t| t.iter_mut().zip(&da).for_each(|(x, y)| *x += y));
                }
                &Op::Reshape(a) => {
                    self.acc(a, |t| t.iter_mut().zip(&g).for_each(|(x, y)| *x += y));
                }
                &Op::SliceRows(a, start, _end) => {
                    let c = self.nodes[a.0].shape[1];
                    self.acc(a, |t| {
                        for (idx, gv) in g.iter().enumerate() {
                            t[start * c + idx] += gv;
                        }
                    });
                }
                Op::ConcatRows(parts) => {
                    let parts = parts.clone();
                    let mut offset = 0;
                    for &p in &parts {
                        let len = self.nodes[p.0].data.len();
                        let gslice = g[offset..offset + len].to_vec();
                        self.acc(p, |t| {
                            t.iter_mut().zip(&gslice).for_each(|(x, y)| *x += y)
                        });
                        offset += len;
                    }
                }
                &Op::ConcatCols(a, b) => {
                    let (r, c1) = (self.nodes[a.0].shape[0], self.nodes[a.0].shape[1]);
                    let c2 = self.nodes[b.0].shape[1];
                    let ct = c1 + c2;
                    self.acc(a, |t| {
                        for ii in 0..r {
                            for j in 0..c1 {
                                t[ii * c1 + j] += g[ii * ct + j];
                            }
                        }
                    });
                    self.acc(b, |t| {
                        for ii in 0..r {
                            for j in 0..c2 {
                                t[ii * c2 + j] += g[ii * ct + c1 + j];
                            }
                        }
                    });
                }
                &Op::Gelu(a) => {
                    let xd = self.nodes[a.0].data.clone();
                    self.acc(a, |t| {
                        for ((x, gv), xv) in t.iter_mut().zip(&g).zip(&xd) {
                            *x += gv * gelu_grad_scalar(*xv);
                        }
                    });
                }
                &Op::Sigmoid(a) => {
                    let yd = self.nodes[i].data.clone();
                    self.acc(a, |t| {
                        for ((x, gv), yv) in t.iter_mut().zip(&g).zip(&yd) {
                            *x += gv * yv * (1.0 - yv);
                        }
                    });
                }
                &Op::Exp(a) => {
                    let yd = self.nodes[i].data.clone();
                    self.acc(a, |t| {
                        for ((x, gv), yv) in t.iter_mut().zip(&g).zip(&yd) {
                            *x += gv * yv;
                        }
                    });
                }
                &Op::Clamp(a, lo, hi) => {
                    let xd = self.nodes[a.0].data.clone();
                    self.acc(a, |t| {
                        for ((x, gv), xv) in t.iter_mut().zip(&g).zip(&xd) {
                            if *xv > lo && *xv < hi {
                                *x += gv;
                            }
                        }
                    });
                }
                &Op::LayerNorm { x, gamma, beta, eps } => {
                    let d = *self.nodes[x.0].shape.last().unwrap();
                    let rows = self.nodes[x.0].data.len() / d;
                    let xd = self.nodes[x.0].data.clone();
                    let gd = self.nodes[gamma.0].data.clone();
                    let mut dx = vec![0.0; xd.len()];
                    let mut dgamma = vec![0.0; d];
                    let mut dbeta = vec![0.0; d];
                    for r in 0..rows {
                        let xi = &xd[r * d..(r + 1) * d];
                        let gi = &g[r * d..(r + 1) * d];
                        let mean = xi.iter().sum::<f64>() / d as f64;
                        let var =
                            xi.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
                        let inv_std = 1.0 / (var + eps).sqrt();
                        let xhat: Vec<f64> = xi.iter().map(|v| (v - mean) * inv_std).collect();
                        let dxhat: Vec<f64> =
                            gi.iter().zip(&gd).map(|(gv, gm)| gv * gm).collect();
                        let s1: f64 = dxhat.iter().sum();
                        let s2: f64 = dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum();
                        let df = d as f64;
                        for j in 0..d {
                            dgamma[j] += gi[j] * xhat[j];
                            dbeta[j] += gi[j];
                            dx[r * d + j] +=
                                inv_std / df * (df * dxhat[j] - s1 - xhat[j] * s2);
                        }
                    }
                    self.acc(x, |t| t.iter_mut().zip(&dx).for_each(|(a, b)| *a += b));
                    self.acc(gamma, |t| t.iter_mut().zip(&dgamma).for_each(|(a, b)| *a += b));
                    self.acc(beta, |t| t.iter_mut().zip(&dbeta).for_each(|(a, b)| *a += b));
                }
                &Op::Conv1dSame { x, w, b, pad } => {
                    let (l, c_in) = (self.nodes[x.0].shape[0], self.nodes[x.0].shape[1]);
                    let (c_out, k) = (self.nodes[w.0].shape[0], self.nodes[w.0].shape[2]);
                    let xd = self.nodes[x.0].data.clone();
                    let wd = self.nodes[w.0].data.clone();
                    if self.needs(x) {
                        let mut dx = vec![0.0; l * c_in];
                        for t in 0..l {
                            for o in 0..c_out {
                                let gv = g[t * c_out + o];
                                if gv == 0.0 {
                                    continue;
                                }
                                for kk in 0..k {
                                    let ti = t as isize + kk as isize - pad as isize;
                                    if ti < 0 || ti >= l as isize {
                                        continue;
                                    }
                                    let ti = ti as usize;
                                    for c in 0..c_in {
                                        dx[ti * c_in + c] += gv * wd[(o * c_in + c) * k + kk];
                                    }
                                }
                            }
                        }
                        self.acc(x, |t| t.iter_mut().zip(&dx).for_each(|(a, b)| *a += b));
                    }
                    if self.needs(w) {
                        let mut dw = vec![0.0; c_out * c_in * k];
                        for t in 0..l {
                            for o in 0..c_out {
                                let gv = g[t * c_out + o];
                                if gv == 0.0 {
                                    continue;
                                }
                                for kk in 0..k {
                                    let ti = t as isize + kk as isize - pad as isize;
                                    if ti < 0 || ti >= l as isize {
                                        continue;
                                    }
                                    let ti = ti as usize;
                                    for c in 0..c_in {
                                        dw[(o * c_in + c) * k + kk] += gv * xd[ti * c_in + c];
                                    }
                                }
                            }
                        }
                        self.acc(w, |t| t.iter_mut().zip(&dw).for_each(|(a, b)| *a += b));
                    }
                    if self.needs(b) {
                        let mut db = vec![0.0; c_out];
                        for t in 0..l {
                            for o in 0..c_out {
                                db[o] += g[t * c_out + o];
                            }
                        }
                        self.acc(b, |t| t.iter_mut().zip(&db).for_each(|(a, v)| *a += v));
                    }
                }
                &Op::AvgPool1dSame(x, kernel) => {
                    let (l, c) = (self.nodes[x.0].shape[0], self.nodes[x.0].shape[1]);
                    let h = (kernel / 2) as isize;
                    let inv = 1.0 / kernel as f64;
                    let mut dx = vec![0.0; l * c];
                    for t in 0..l {
                        for ch in 0..c {
                            let gv = g[t * c + ch] * inv;
                            for j in -h..=h {
                                let idx = (t as isize + j).clamp(0, l as isize - 1) as usize;
                                dx[idx * c + ch] += gv;
                            }
                        }
                    }
                    self.acc(x, |t| t.iter_mut().zip(&dx).for_each(|(a, b)| *a += b));
                }
                &Op::MeanRows(x) => {
                    let (l, d) = (self.nodes[x.0].shape[0], self.nodes[x.0].shape[1]);
                    let inv = 1.0 / l as f64;
                    self.acc(x, |t| {
                        for r in 0..l {
                            for j in 0..d {
                                t[r * d + j] += g[j] * inv;
                            }
                        }
                    });
                }
                Op::Dropout(x, mask) => {
                    let x = *x;
                    let mask = mask.clone();
                    self.acc(x, |t| {
                        for ((a, gv), m) in t.iter_mut().zip(&g).zip(&mask) {
                            *a += gv * m;
                        }
                    });
                }
                &Op::Sum(a) => {
                    let gv = g[0];
                    self.acc(a, |t| t.iter_mut().for_each(|x| *x += gv));
                }
                &Op::Mean(a) => {
                    let gv = g[0] / self.nodes[a.0].data.len() as f64;
                    self.acc(a, |t| t.iter_mut().for_each(|x| *x += gv));
                }
                Op::CrossEntropy(logits, labels) => {
                    let logits = *logits;
                    let labels = labels.clone();
                    let (b, k) = (self.nodes[logits.0].shape[0], self.nodes[logits.0].shape[1]);
                    let ld = self.nodes[logits.0].data.clone();
                    let scale = g[0] / b as f64;
                    let mut dl = vec![0.0; b * k];
                    for (ii, &lab) in labels.iter().enumerate() {
                        let row = &ld[ii * k..(ii + 1) * k];
                        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let exps: Vec<f64> = row.iter().map(|v| (v - mx).exp()).collect();
                        let se: f64 = exps.iter().sum();
                        for j in 0..k {
                            let soft = exps[j] / se;
                            dl[ii * k + j] =
                                scale * (soft - if j == lab { 1.0 } else { 0.0 });
                        }
                    }
                    self.acc(logits, |t| t.iter_mut().zip(&dl).for_each(|(a, v)| *a += v));
                }
            }
            self.nodes[i].op = op;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_identity_and_hand_case() {
        let mut g = Graph::new();
        let i2 = g.leaf_from(vec![1.0, 0.0, 0.0, 1.0], &[2, 2]);
        let i2b = g.leaf_from(vec![1.0, 0.0, 0.0, 1.0], &[2, 2]);
        let p = g.matmul(i2, i2b).unwrap();
        assert_eq!(g.value(p), &[1.0, 0.0, 0.0, 1.0]);

        let a = g.leaf_from(vec![1.0, 2.0, 3.0, 4.0], &[2, 2]);
        let b = g.leaf_from(vec![0.0, 1.0], &[2, 1]);
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.value(c), &[2.0, 4.0]);
    }

    #[test]
    fn matmul_shape_mismatch_is_dim_error() {
        let mut g = Graph::new();
        let a = g.leaf_from(vec![0.0; 6], &[2, 3]);
        let b = g.leaf_from(vec![0.0; 4], &[2, 2]);
        assert!(matches!(g.matmul(a, b), Err(Error::Dim(_))));
    }

    #[test]
    fn dropout_eval_is_exact_identity() {
        let mut g = Graph::new();
        let mut rng = RngHandle::seed(0);
        let t = Tensor::from_fn(&[4, 3], |i| i as f64 * 0.37 - 1.0);
        let x = g.leaf(&t);
        let y = g.dropout(x, 0.5, false, &mut rng).unwrap();
        assert_eq!(x, y); // same node: bitwise identity by construction
        let z = g.dropout(x, 0.0, true, &mut rng).unwrap();
        assert_eq!(x, z);
    }

    #[test]
    fn dropout_rejects_p_one() {
        let mut g = Graph::new();
        let mut rng = RngHandle::seed(0);
        let x = g.leaf_from(vec![1.0], &[1]);
        assert!(matches!(
            g.dropout(x, 1.0, true, &mut rng),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn dropout_statistics() {
        let mut g = Graph::new();
        let mut rng = RngHandle::seed(3);
        let n = 100_000;
        let x = g.leaf_from(vec![1.0; n], &[n]);
        let y = g.dropout(x, 0.5, true, &mut rng).unwrap();
        let zeros = g.value(y).iter().filter(|v| **v == 0.0).count();
        let frac = zeros as f64 / n as f64;
        assert!((frac - 0.5).abs() < 0.01, "zero fraction {}", frac);
        // survivors are scaled by 2
        assert!(g.value(y).iter().all(|v| *v == 0.0 || *v == 2.0));
    }

    #[test]
    fn layer_norm_normalizes_rows() {
        let mut g = Graph::new();
        let x = g.leaf_from(vec![1.0, 2.0, 3.0, 4.0, 10.0, 10.0, 10.0, 10.0], &[2, 4]);
        let gamma = g.leaf_from(vec![1.0; 4], &[4]);
        let beta = g.leaf_from(vec![0.0; 4], &[4]);
        let y = g.layer_norm(x, gamma, beta, 1e-5).unwrap();
        let out = g.value(y);
        let m0: f64 = out[..4].iter().sum::<f64>() / 4.0;
        assert!(m0.abs() < 1e-12);
        let v0: f64 = out[..4].iter().map(|v| v * v).sum::<f64>() / 4.0;
        assert!((v0 - 1.0).abs() < 1e-4); // eps shrinks variance slightly
        // constant row collapses to beta (zero variance absorbed by eps)
        assert!(out[4..].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn layer_norm_degenerate_variance_error() {
        let mut g = Graph::new();
        let x = g.leaf_from(vec![1.0, 2.0], &[2, 1]);
        let gamma = g.leaf_from(vec![1.0], &[1]);
        let beta = g.leaf_from(vec![0.0], &[1]);
        assert!(matches!(
            g.layer_norm(x, gamma, beta, 0.0),
            Err(Error::Numeric(_))
        ));
        assert!(g.layer_norm(x, gamma, beta, 1e-5).is_ok());
    }

    #[test]
    fn conv1d_identity_kernel_and_window_sum() {
        let mut g = Graph::new();
        let x = g.leaf_from((0..8).map(|i| i as f64).collect(), &[8, 1]);
        let w = g.leaf_from(vec![1.0], &[1, 1, 1]);
        let b = g.leaf_from(vec![0.0], &[1]);
        let y = g.conv1d_same(x, w, b, 0).unwrap();
        assert_eq!(g.value(y), g.value(x));

        // constant input, all-ones kernel of 7: interior positions sum to 7c
        let c = 2.5;
        let xc = g.leaf_from(vec![c; 16], &[16, 1]);
        let w7 = g.leaf_from(vec![1.0; 7], &[1, 1, 7]);
        let y7 = g.conv1d_same(xc, w7, b, 3).unwrap();
        assert!((g.value(y7)[8] - 7.0 * c).abs() < 1e-12);
    }

    #[test]
    fn conv1d_even_kernel_rejected() {
        let mut g = Graph::new();
        let x = g.leaf_from(vec![0.0; 8], &[8, 1]);
        let w = g.leaf_from(vec![1.0; 4], &[1, 1, 4]);
        let b = g.leaf_from(vec![0.0], &[1]);
        assert!(matches!(
            g.conv1d_same(x, w, b, 2),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn avg_pool_constant_and_identity_and_ramp() {
        let mut g = Graph::new();
        let c = g.leaf_from(vec![3.25; 10], &[10, 1]);
        let y = g.avg_pool1d_same(c, 5).unwrap();
        assert!(g.value(y).iter().all(|v| (*v - 3.25).abs() < 1e-12));

        let x = g.leaf_from((0..16).map(|i| i as f64).collect(), &[16, 1]);
        let y1 = g.avg_pool1d_same(x, 1).unwrap();
        assert_eq!(g.value(y1), g.value(x));

        let y3 = g.avg_pool1d_same(x, 3).unwrap();
        assert_eq!(g.value(y3)[5], 5.0); // (4+5+6)/3
    }

    #[test]
    fn avg_pool_oversized_kernel_rejected() {
        let mut g = Graph::new();
        let x = g.leaf_from(vec![0.0; 4], &[4, 1]);
        assert!(matches!(
            g.avg_pool1d_same(x, 9),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn mean_rows_small_case() {
        let mut g = Graph::new();
        let x = g.leaf_from(vec![1.0, 1.0, 3.0, 3.0], &[2, 2]);
        let y = g.mean_rows(x);
        assert_eq!(g.value(y), &[2.0, 2.0]);
        let single = g.leaf_from(vec![7.0, 8.0], &[1, 2]);
        let ys = g.mean_rows(single);
        assert_eq!(g.value(ys), &[7.0, 8.0]);
    }

    #[test]
    fn matmul_associativity() {
        let mut rng = RngHandle::seed(11);
        let mut g = Graph::new();
        let a = g.leaf_from((0..6).map(|_| rng.uniform(-2.0, 2.0)).collect(), &[2, 3]);
        let b = g.leaf_from((0..12).map(|_| rng.uniform(-2.0, 2.0)).collect(), &[3, 4]);
        let c = g.leaf_from((0..8).map(|_| rng.uniform(-2.0, 2.0)).collect(), &[4, 2]);
        let ab = g.matmul(a, b).unwrap();
        let ab_c = g.matmul(ab, c).unwrap();
        let bc = g.matmul(b, c).unwrap();
        let a_bc = g.matmul(a, bc).unwrap();
        for (x, y) in g.value(ab_c).iter().zip(g.value(a_bc)) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn cross_entropy_matches_manual() {
        let mut g = Graph::new();
        let logits = g.leaf_from(vec![2.0, 1.0, 0.1, 0.1, 2.0, 1.0], &[2, 3]);
        let l = g.cross_entropy(logits, &[0, 1]);
        let lse0 = (2f64.exp() + 1f64.exp() + 0.1f64.exp()).ln();
        let lse1 = (0.1f64.exp() + 2f64.exp() + 1f64.exp()).ln();
        let expected = ((lse0 - 2.0) + (lse1 - 2.0)) / 2.0;
        assert!((g.value(l)[0] - expected).abs() < 1e-12);
    }
}
