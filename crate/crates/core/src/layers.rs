//! Shared parameter atoms (linear, two-layer MLP, layer norm) and the
//! binding glue that registers parameters on a fresh graph each step.

use std::collections::HashMap;

use crate::error::Result;
use crate::numerics::{Graph, NodeId, Tensor};
use crate::rng::RngHandle;

/// Records `(canonical name, leaf id)` pairs for one graph so gradients can
/// be routed back into the owning tensors after the backward sweep.
#[derive(Default)]
pub struct Bindings {
    entries: Vec<(String, NodeId)>,
}

impl Bindings {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bind(&mut self, g: &mut Graph, name: String, t: &Tensor) -> NodeId {
        let id = g.param(t);
        self.entries.push((name, id));
        id
    }

    /// Gradients by name after `backward`; parameters with no path to the
    /// loss are omitted.
    pub fn collect_grads(&self, g: &Graph) -> HashMap<String, Vec<f64>> {
        let mut out = HashMap::new();
        for (name, id) in &self.entries {
            if let Some(grad) = g.grad(*id) {
                out.entry(name.clone())
                    .and_modify(|acc: &mut Vec<f64>| {
                        for (a, b) in acc.iter_mut().zip(grad) {
                            *a += b;
                        }
                    })
                    .or_insert_with(|| grad.to_vec());
            }
        }
        out
    }
}

/// `y = x W^T + b` with `w: [out, in]`, `b: [out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearParams {
    pub w: Tensor,
    pub b: Tensor,
}

#[derive(Debug, Clone, Copy)]
pub struct LinearNodes {
    pub w: NodeId,
    pub b: NodeId,
}

impl LinearParams {
    /// Fan-in scaled uniform init, `U(-sqrt(1/in), sqrt(1/in))` for both
    /// weight and bias.
    pub fn init(in_dim: usize, out_dim: usize, rng: &mut RngHandle) -> Self {
        let bound = (1.0 / in_dim as f64).sqrt();
        Self {
            w: Tensor::from_fn(&[out_dim, in_dim], |_| rng.uniform(-bound, bound)),
            b: Tensor::from_fn(&[out_dim], |_| rng.uniform(-bound, bound)),
        }
    }

    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            w: Tensor::zeros(&[out_dim, in_dim]),
            b: Tensor::zeros(&[out_dim]),
        }
    }

    pub fn bind(&self, g: &mut Graph, binds: &mut Bindings, prefix: &str) -> LinearNodes {
        LinearNodes {
            w: binds.bind(g, format!("{prefix}.w"), &self.w),
            b: binds.bind(g, format!("{prefix}.b"), &self.b),
        }
    }

    pub fn for_each(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        f(&format!("{prefix}.w"), &self.w);
        f(&format!("{prefix}.b"), &self.b);
    }

    pub fn for_each_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&format!("{prefix}.w"), &mut self.w);
        f(&format!("{prefix}.b"), &mut self.b);
    }
}

/// Apply a bound linear layer to a 2-D node `[n, in] -> [n, out]`.
pub fn linear(g: &mut Graph, x: NodeId, n: &LinearNodes) -> Result<NodeId> {
    let wt = g.transpose(n.w);
    let xw = g.matmul(x, wt)?;
    Ok(g.add_row(xw, n.b))
}

/// Two-layer MLP `fc2(gelu(fc1(x)))`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp2Params {
    pub fc1: LinearParams,
    pub fc2: LinearParams,
}

#[derive(Debug, Clone, Copy)]
pub struct Mlp2Nodes {
    pub fc1: LinearNodes,
    pub fc2: LinearNodes,
}

impl Mlp2Params {
    pub fn init(in_dim: usize, hidden: usize, out_dim: usize, rng: &mut RngHandle) -> Self {
        Self {
            fc1: LinearParams::init(in_dim, hidden, rng),
            fc2: LinearParams::init(hidden, out_dim, rng),
        }
    }

    /// Random first layer, zero second layer: the MLP is the zero map at
    /// initialization, which keeps residual blocks at identity.
    pub fn init_zero_out(in_dim: usize, hidden: usize, out_dim: usize, rng: &mut RngHandle) -> Self {
        Self {
            fc1: LinearParams::init(in_dim, hidden, rng),
            fc2: LinearParams::zeros(hidden, out_dim),
        }
    }

    pub fn bind(&self, g: &mut Graph, binds: &mut Bindings, prefix: &str) -> Mlp2Nodes {
        Mlp2Nodes {
            fc1: self.fc1.bind(g, binds, &format!("{prefix}.fc1")),
            fc2: self.fc2.bind(g, binds, &format!("{prefix}.fc2")),
        }
    }

    pub fn for_each(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.fc1.for_each(&format!("{prefix}.fc1"), f);
        self.fc2.for_each(&format!("{prefix}.fc2"), f);
    }

    pub fn for_each_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.fc1.for_each_mut(&format!("{prefix}.fc1"), f);
        self.fc2.for_each_mut(&format!("{prefix}.fc2"), f);
    }
}

pub fn mlp2(g: &mut Graph, x: NodeId, n: &Mlp2Nodes) -> Result<NodeId> {
    let h = linear(g, x, &n.fc1)?;
    let h = g.gelu(h);
    linear(g, h, &n.fc2)
}

/// Learnable layer-norm affine over the last axis.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormParams {
    pub gamma: Tensor,
    pub beta: Tensor,
}

#[derive(Debug, Clone, Copy)]
pub struct LayerNormNodes {
    pub gamma: NodeId,
    pub beta: NodeId,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

impl LayerNormParams {
    pub fn init(dim: usize) -> Self {
        Self {
            gamma: Tensor::full(&[dim], 1.0),
            beta: Tensor::zeros(&[dim]),
        }
    }

    pub fn bind(&self, g: &mut Graph, binds: &mut Bindings, prefix: &str) -> LayerNormNodes {
        LayerNormNodes {
            gamma: binds.bind(g, format!("{prefix}.gamma"), &self.gamma),
            beta: binds.bind(g, format!("{prefix}.beta"), &self.beta),
        }
    }

    pub fn for_each(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        f(&format!("{prefix}.gamma"), &self.gamma);
        f(&format!("{prefix}.beta"), &self.beta);
    }

    pub fn for_each_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&format!("{prefix}.gamma"), &mut self.gamma);
        f(&format!("{prefix}.beta"), &mut self.beta);
    }
}

pub fn layer_norm(g: &mut Graph, x: NodeId, n: &LayerNormNodes) -> Result<NodeId> {
    g.layer_norm(x, n.gamma, n.beta, LAYER_NORM_EPS)
}
