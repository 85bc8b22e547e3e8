//! Moving-average series decomposition.
//!
//! The trend is a sliding mean with replicate padding; the seasonal part is
//! defined as the residual, so `trend + seasonal` reconstructs the input
//! exactly by construction. Decompositions are computed outside the autodiff
//! graph: they supervise the decoders, they are not trained through.

use crate::error::{Error, Result};
use crate::numerics::{avg_pool_same_into, Tensor};

/// Trend/seasonal split of one series.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub trend: Tensor,
    pub seasonal: Tensor,
}

/// Decompose an `[L, 1]` (or `[L]`) series with an odd moving-average kernel.
pub fn decompose(x: &Tensor, kernel: usize) -> Result<Decomposition> {
    let l = x.numel();
    if l == 0 {
        return Err(Error::Dim("decompose: empty series".into()));
    }
    if x.shape.len() > 2 || (x.shape.len() == 2 && x.shape[1] != 1) {
        return Err(Error::Dim(format!(
            "decompose expects [L,1] or [L], got {:?}",
            x.shape
        )));
    }
    if kernel % 2 == 0 {
        return Err(Error::Config(format!(
            "decompose: kernel {} must be odd",
            kernel
        )));
    }
    if kernel > 2 * l - 1 {
        return Err(Error::Config(format!(
            "decompose: kernel {} exceeds 2*len-1 = {}",
            kernel,
            2 * l - 1
        )));
    }
    let mut trend = vec![0.0; l];
    avg_pool_same_into(&x.data, l, 1, kernel, &mut trend);
    let mut seasonal = vec![0.0; l];
    for i in 0..l {
        let (t, s) = exact_split(x.data[i], trend[i]);
        trend[i] = t;
        seasonal[i] = s;
    }
    let shape = x.shape.clone();
    Ok(Decomposition {
        trend: Tensor {
            shape: shape.clone(),
            data: trend,
            grad: None,
            requires_grad: false,
        },
        seasonal: Tensor {
            shape,
            data: seasonal,
            grad: None,
            requires_grad: false,
        },
    })
}

fn step_ulp(v: f64, up: bool) -> f64 {
    if v == 0.0 {
        let tiny = f64::from_bits(1);
        return if up { tiny } else { -tiny };
    }
    let bits = v.to_bits();
    f64::from_bits(if (v > 0.0) == up { bits + 1 } else { bits - 1 })
}

/// Split `xv` into `(trend, seasonal)` near the pooled value `t0` such that
/// `trend + seasonal == xv` holds bitwise.
///
/// The plain residual `s = xv - t0` re-adds exactly for most points; the
/// rest are repaired by re-deriving and walking a few ulps. Where rounding
/// grids make any nearby pair unreachable (both components much larger in
/// magnitude than `xv`), the trend is pulled toward `xv` until an exact pair
/// exists — reconstruction exactness is the contract, the pooled value is
/// the target.
fn exact_split(xv: f64, t0: f64) -> (f64, f64) {
    let pair = |t: f64| -> Option<(f64, f64)> {
        let s = xv - t;
        if t + s == xv {
            Some((t, s))
        } else {
            None
        }
    };
    if let Some(p) = pair(t0) {
        return p;
    }
    let s0 = xv - t0;
    if let Some(p) = pair(xv - s0) {
        return p;
    }
    let mut tu = t0;
    let mut td = t0;
    for _ in 0..3 {
        tu = step_ulp(tu, true);
        td = step_ulp(td, false);
        if let Some(p) = pair(tu) {
            return p;
        }
        if let Some(p) = pair(td) {
            return p;
        }
    }
    let mut t = t0;
    for _ in 0..200 {
        t = 0.5 * (t + xv);
        if let Some(p) = pair(t) {
            return p;
        }
    }
    (xv, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngHandle;
    use proptest::prelude::*;

    fn series(data: Vec<f64>) -> Tensor {
        let l = data.len();
        Tensor::from_vec(data, &[l, 1]).unwrap()
    }

    #[test]
    fn constant_series_is_pure_trend() {
        let x = series(vec![4.2; 64]);
        let d = decompose(&x, 25).unwrap();
        assert!(d.trend.data.iter().all(|v| (*v - 4.2).abs() < 1e-12));
        assert!(d.seasonal.data.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn additivity_is_exact_to_the_ulp() {
        let mut rng = RngHandle::seed(5);
        for _ in 0..50 {
            let x = series((0..128).map(|_| rng.uniform(-3.0, 3.0)).collect());
            let d = decompose(&x, 25).unwrap();
            for i in 0..128 {
                // residual construction: bitwise identity
                assert_eq!(d.trend.data[i] + d.seasonal.data[i], x.data[i]);
            }
        }
    }

    #[test]
    fn period_8_sine_has_nearly_flat_trend() {
        // independent oracle: direct windowed mean at each interior position
        let l = 256;
        let kernel = 25usize;
        let x: Vec<f64> = (0..l)
            .map(|t| (2.0 * std::f64::consts::PI * t as f64 / 8.0).sin())
            .collect();
        let h = kernel / 2;
        let mut oracle_max: f64 = 0.0;
        for t in h..l - h {
            let mean: f64 = x[t - h..=t + h].iter().sum::<f64>() / kernel as f64;
            oracle_max = oracle_max.max(mean.abs());
        }
        assert!(oracle_max < 0.05, "oracle windowed mean {}", oracle_max);

        let d = decompose(&series(x.clone()), kernel).unwrap();
        let max_interior: f64 = (h..l - h)
            .map(|t| d.trend.data[t].abs())
            .fold(0.0, f64::max);
        assert!(max_interior < 0.05, "interior trend max {}", max_interior);
        // the trend agrees with the oracle except at the rare points where
        // the exactness repair had to pull it toward the series value, and
        // reconstruction is bitwise everywhere regardless
        let mut repaired = 0;
        for t in h..l - h {
            let mean: f64 = x[t - h..=t + h].iter().sum::<f64>() / kernel as f64;
            if (d.trend.data[t] - mean).abs() >= 1e-12 {
                repaired += 1;
                assert!(d.trend.data[t].abs() <= mean.abs() + 1e-12);
            }
            assert_eq!(d.trend.data[t] + d.seasonal.data[t], x[t]);
        }
        assert!(
            repaired * 20 < l,
            "too many repaired points: {} of {}",
            repaired,
            l
        );
    }

    #[test]
    fn linear_ramp_trend_is_identity_in_the_interior() {
        let l = 64;
        let x = series((0..l).map(|t| 0.5 * t as f64 - 3.0).collect());
        let d = decompose(&x, 9).unwrap();
        let second = decompose(&d.trend, 9).unwrap();
        for t in 8..l - 8 {
            assert!(
                second.seasonal.data[t].abs() < 1e-10,
                "second-pass seasonal at {}: {}",
                t,
                second.seasonal.data[t]
            );
        }
    }

    #[test]
    fn even_kernel_rejected() {
        let x = series(vec![0.0; 16]);
        assert!(matches!(decompose(&x, 4), Err(Error::Config(_))));
    }

    proptest! {
        // Linearity of the full decomposition, on series bounded away from
        // zero so the bitwise-exactness repair stays at ulp scale.
        #[test]
        fn linearity(a in 0.1f64..3.0, b in 0.1f64..3.0, seed in 0u64..1000) {
            let mut rng = RngHandle::seed(seed);
            let x: Vec<f64> = (0..64).map(|_| rng.uniform(1.0, 3.0)).collect();
            let y: Vec<f64> = (0..64).map(|_| rng.uniform(1.0, 3.0)).collect();
            let combo: Vec<f64> = x.iter().zip(&y).map(|(u, v)| a * u + b * v).collect();
            let dx = decompose(&series(x), 7).unwrap();
            let dy = decompose(&series(y), 7).unwrap();
            let dc = decompose(&series(combo), 7).unwrap();
            for i in 0..64 {
                let expect = a * dx.trend.data[i] + b * dy.trend.data[i];
                prop_assert!((dc.trend.data[i] - expect).abs() < 1e-12);
                let expect_s = a * dx.seasonal.data[i] + b * dy.seasonal.data[i];
                prop_assert!((dc.seasonal.data[i] - expect_s).abs() < 1e-12);
            }
        }

        // Linearity of the trend extraction itself (the moving average),
        // with arbitrary signs and no repair in the loop.
        #[test]
        fn pool_linearity(a in -3.0f64..3.0, b in -3.0f64..3.0, seed in 0u64..1000) {
            let mut rng = RngHandle::seed(seed);
            let x: Vec<f64> = (0..64).map(|_| rng.uniform(-2.0, 2.0)).collect();
            let y: Vec<f64> = (0..64).map(|_| rng.uniform(-2.0, 2.0)).collect();
            let combo: Vec<f64> = x.iter().zip(&y).map(|(u, v)| a * u + b * v).collect();
            let mut px = vec![0.0; 64];
            let mut py = vec![0.0; 64];
            let mut pc = vec![0.0; 64];
            crate::numerics::test_pool(&x, 7, &mut px);
            crate::numerics::test_pool(&y, 7, &mut py);
            crate::numerics::test_pool(&combo, 7, &mut pc);
            for i in 0..64 {
                prop_assert!((pc[i] - (a * px[i] + b * py[i])).abs() < 1e-12);
            }
        }
    }
}
