//! Dense f64 tensor arithmetic with reverse-mode automatic differentiation.
//!
//! [`Tensor`] is the plain value type (row-major f64 buffer plus shape);
//! [`graph::Graph`] is the tape that records operations and runs the
//! backward sweep. Everything is 64-bit so finite-difference gradient checks
//! can be held to tight tolerances.

pub mod adam;
pub mod fd;
pub mod graph;

pub use adam::AdamState;
pub use fd::finite_diff_gradient;
pub use graph::{Graph, NodeId};

use crate::error::{Error, Result};

/// Dense n-dimensional f64 value, row-major.
///
/// `grad`, when present, always has the same length as `data`; it is filled
/// in by the training loop after a backward pass and consumed by the
/// optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub grad: Option<Vec<f64>>,
    pub requires_grad: bool,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
            grad: None,
            requires_grad: false,
        }
    }

    pub fn full(shape: &[usize], v: f64) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![v; n],
            grad: None,
            requires_grad: false,
        }
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor {
            shape: vec![1],
            data: vec![v],
            grad: None,
            requires_grad: false,
        }
    }

    /// Construct from raw data, validating length and finiteness.
    /// Non-finite input is an explicit error path, never a silent NaN.
    pub fn from_vec(data: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if data.len() != n {
            return Err(Error::Dim(format!(
                "data length {} does not match shape {:?} (numel {})",
                data.len(),
                shape,
                n
            )));
        }
        if let Some(bad) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite value {} at flat index {}",
                data[bad], bad
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
            grad: None,
            requires_grad: false,
        })
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..n).map(|i| f(i)).collect(),
            grad: None,
            requires_grad: false,
        }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    /// Row count of a 2-D tensor.
    pub fn rows(&self) -> usize {
        assert_eq!(self.shape.len(), 2, "rows() requires a 2-D tensor");
        self.shape[0]
    }

    /// Column count of a 2-D tensor.
    pub fn cols(&self) -> usize {
        assert_eq!(self.shape.len(), 2, "cols() requires a 2-D tensor");
        self.shape[1]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }
}

/// `a[m,k] @ b[k,n] -> c[m,n]`, accumulating into `c` (caller zeroes it).
/// i-k-j loop order keeps the inner loop contiguous in both `b` and `c`.
pub(crate) fn matmul_into(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow.iter()) {
                *cv += av * bv;
            }
        }
    }
}

/// Sliding mean over the time axis with replicate (edge-value) padding, so a
/// constant series pools to itself exactly at every position.
/// `x` is `[l, c]` row-major, `kernel` odd.
///
/// The window mean is computed as `center + mean(x_j - center)`: identical in
/// exact arithmetic, but bitwise exact on constant windows because every
/// summand is then 0.0.
pub(crate) fn avg_pool_same_into(x: &[f64], l: usize, c: usize, kernel: usize, out: &mut [f64]) {
    let h = (kernel / 2) as isize;
    let inv = 1.0 / kernel as f64;
    for t in 0..l {
        for ch in 0..c {
            let center = x[t * c + ch];
            let mut s = 0.0;
            for j in -h..=h {
                let idx = (t as isize + j).clamp(0, l as isize - 1) as usize;
                s += x[idx * c + ch] - center;
            }
            out[t * c + ch] = center + s * inv;
        }
    }
}

#[cfg(test)]
pub(crate) fn test_pool(x: &[f64], kernel: usize, out: &mut [f64]) {
    avg_pool_same_into(x, x.len(), 1, kernel, out);
}

/// Exact GELU: `x * Phi(x)` with the Gaussian CDF via erf.
pub(crate) fn gelu_scalar(x: f64) -> f64 {
    x * 0.5 * (1.0 + statrs::function::erf::erf(x / std::f64::consts::SQRT_2))
}

/// d/dx of exact GELU: `Phi(x) + x * phi(x)`.
pub(crate) fn gelu_grad_scalar(x: f64) -> f64 {
    let phi_cdf = 0.5 * (1.0 + statrs::function::erf::erf(x / std::f64::consts::SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    phi_cdf + x * pdf
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_length_and_finiteness() {
        assert!(Tensor::from_vec(vec![1.0, 2.0], &[2]).is_ok());
        assert!(matches!(
            Tensor::from_vec(vec![1.0, 2.0], &[3]),
            Err(Error::Dim(_))
        ));
        assert!(matches!(
            Tensor::from_vec(vec![1.0, f64::NAN], &[2]),
            Err(Error::Numeric(_))
        ));
        assert!(matches!(
            Tensor::from_vec(vec![f64::INFINITY], &[1]),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn matmul_into_hand_checked() {
        // [[1,2],[3,4]] @ [[0],[1]] = [[2],[4]]
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [0.0, 1.0];
        let mut c = [0.0; 2];
        matmul_into(&a, &b, &mut c, 2, 2, 1);
        assert_eq!(c, [2.0, 4.0]);
    }

    #[test]
    fn gelu_scalar_matches_known_points() {
        assert_eq!(gelu_scalar(0.0), 0.0);
        assert!((gelu_scalar(10.0) - 10.0).abs() < 1e-6);
        // gelu(-10) ~ 0
        assert!(gelu_scalar(-10.0).abs() < 1e-6);
        // symmetry identity: gelu(x) - gelu(-x) = x
        for &x in &[0.3, 1.7, 2.5] {
            assert!((gelu_scalar(x) - gelu_scalar(-x) - x).abs() < 1e-12);
        }
    }
}
