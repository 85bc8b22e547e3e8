//! Adam optimizer with bias correction.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Optimizer state: per-parameter moment buffers keyed by canonical name.
///
/// `step_count` increases by exactly one per [`AdamState::begin_step`], which
/// the training loop calls once per optimizer step before updating tensors.
#[derive(Debug)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step_count: u64,
    moments: HashMap<String, (Vec<f64>, Vec<f64>)>,
}

impl AdamState {
    /// Defaults `beta1 = 0.9`, `beta2 = 0.999`, `eps = 1e-8`.
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step_count: 0,
            moments: HashMap::new(),
        }
    }

    pub fn begin_step(&mut self) {
        self.step_count += 1;
    }

    /// Apply one Adam update to a named tensor using its attached gradient.
    ///
    /// A missing or all-zero gradient leaves the parameter (and its moments)
    /// untouched, so parameters outside the current loss surface never
    /// drift. Non-finite gradients abort, naming the parameter.
    pub fn update(&mut self, name: &str, t: &mut Tensor) -> Result<()> {
        let Some(grad) = t.grad.as_ref() else {
            return Ok(());
        };
        if grad.len() != t.data.len() {
            return Err(Error::Dim(format!(
                "adam: gradient length {} != parameter length {} for `{}`",
                grad.len(),
                t.data.len(),
                name
            )));
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite gradient for parameter `{}`",
                name
            )));
        }
        if grad.iter().all(|g| *g == 0.0) {
            return Ok(());
        }
        assert!(self.step_count > 0, "adam: begin_step() not called");
        let (m, v) = self
            .moments
            .entry(name.to_string())
            .or_insert_with(|| (vec![0.0; t.data.len()], vec![0.0; t.data.len()]));
        let t_f = self.step_count as f64;
        let bc1 = 1.0 - self.beta1.powf(t_f);
        let bc2 = 1.0 - self.beta2.powf(t_f);
        for ((p, g), (mi, vi)) in t
            .data
            .iter_mut()
            .zip(grad.iter())
            .zip(m.iter_mut().zip(v.iter_mut()))
        {
            *mi = self.beta1 * *mi + (1.0 - self.beta1) * g;
            *vi = self.beta2 * *vi + (1.0 - self.beta2) * g * g;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}
