//! Central finite differences, the independent gradient oracle.

/// Per-coordinate central differences `(f(x + h e_i) - f(x - h e_i)) / 2h`.
///
/// `f` is any scalar-valued function of a flat coordinate vector; it is
/// evaluated `2 * len(x)` times and must be deterministic across calls.
pub fn finite_diff_gradient(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    assert!(h > 0.0, "finite_diff_gradient: h must be positive");
    let mut grad = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let fp = f(&probe);
        probe[i] = x[i] - h;
        let fm = f(&probe);
        probe[i] = x[i];
        grad[i] = (fp - fm) / (2.0 * h);
    }
    grad
}

/// Relative error with a floor, used by every gradient comparison:
/// `|a - b| / max(|a|, |b|, floor)`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Maximum elementwise [`rel_err`] between two gradient vectors.
pub fn max_rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| rel_err(*x, *y, floor))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_has_unit_gradient() {
        let x = [0.3, -1.2, 2.0];
        let g = finite_diff_gradient(&mut |v| v.iter().sum(), &x, 1e-5);
        for v in g {
            assert!((v - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn half_norm_squared_gradient_is_x() {
        let x = [0.7, -0.4, 1.9, 0.0];
        let g = finite_diff_gradient(
            &mut |v| 0.5 * v.iter().map(|a| a * a).sum::<f64>(),
            &x,
            1e-5,
        );
        for (gi, xi) in g.iter().zip(&x) {
            assert!((gi - xi).abs() < 1e-9, "{} vs {}", gi, xi);
        }
    }
}
