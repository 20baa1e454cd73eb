//! Percentile bootstrap over whole runs.
//!
//! Resampling whole curves (not per-epoch points) preserves the within-run
//! correlation structure of a learning curve.

use rand::Rng;

use crate::error::{Error, Result};
use crate::seed;

/// Pointwise mean with a lower/upper percentile band.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveBand {
    pub mean: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

/// Resample `curves` (rows) with replacement `iters` times and take the
/// per-epoch percentile band of the resampled means at `(1 +/- level) / 2`.
pub fn bootstrap_mean_ci(
    curves: &[Vec<f64>],
    iters: usize,
    level: f64,
    seed_val: u64,
) -> Result<CurveBand> {
    if curves.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "bootstrap needs at least 2 curves, got {}",
            curves.len()
        )));
    }
    let epochs = curves[0].len();
    if epochs == 0 || curves.iter().any(|c| c.len() != epochs) {
        return Err(Error::ShapeMismatch("curves must share a non-zero length".into()));
    }
    if !(0.0 < level && level < 1.0) {
        return Err(Error::InvalidConfig(format!("level must lie in (0,1), got {level}")));
    }
    if iters == 0 {
        return Err(Error::InvalidConfig("iters must be positive".into()));
    }

    let n = curves.len();
    let mean: Vec<f64> = (0..epochs)
        .map(|e| curves.iter().map(|c| c[e]).sum::<f64>() / n as f64)
        .collect();

    let mut rng = seed::rng(seed_val);
    // resampled[e] collects the mean at epoch e for every iteration.
    let mut resampled = vec![vec![0.0f64; iters]; epochs];
    let mut acc = vec![0.0f64; epochs];
    for it in 0..iters {
        acc.iter_mut().for_each(|a| *a = 0.0);
        for _ in 0..n {
            let pick = rng.random_range(0..n);
            for (a, v) in acc.iter_mut().zip(&curves[pick]) {
                *a += v;
            }
        }
        for (e, a) in acc.iter().enumerate() {
            resampled[e][it] = a / n as f64;
        }
    }

    let q_lo = (1.0 - level) / 2.0;
    let q_hi = (1.0 + level) / 2.0;
    let mut lo = Vec::with_capacity(epochs);
    let mut hi = Vec::with_capacity(epochs);
    for column in &mut resampled {
        column.sort_by(|a, b| a.partial_cmp(b).expect("finite means"));
        lo.push(percentile(column, q_lo));
        hi.push(percentile(column, q_hi));
    }
    Ok(CurveBand { mean, lo, hi })
}

/// Linear-interpolation percentile of a sorted slice.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let position = q * (sorted.len() - 1) as f64;
    let below = position.floor() as usize;
    let above = position.ceil() as usize;
    if below == above {
        return sorted[below];
    }
    let weight = position - below as f64;
    sorted[below] * (1.0 - weight) + sorted[above] * weight
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_curves_give_zero_width_band() {
        let curve = vec![0.5, 0.7, 0.9];
        let curves = vec![curve.clone(); 8];
        let band = bootstrap_mean_ci(&curves, 500, 0.95, 3).unwrap();
        // Exactly zero width; the mean matches the curve up to the rounding
        // of the 8-term average.
        assert_eq!(band.lo, band.mean);
        assert_eq!(band.hi, band.mean);
        for (m, c) in band.mean.iter().zip(&curve) {
            assert!((m - c).abs() < 1e-15);
        }
    }

    #[test]
    fn band_contains_the_sample_mean() {
        let mut rng = crate::seed::rng(17);
        use rand::Rng;
        for trial in 0..20 {
            let curves: Vec<Vec<f64>> = (0..12)
                .map(|_| (0..5).map(|_| rng.random_range(0.0..1.0)).collect())
                .collect();
            let band = bootstrap_mean_ci(&curves, 1000, 0.95, 100 + trial).unwrap();
            for e in 0..5 {
                assert!(band.lo[e] <= band.mean[e] && band.mean[e] <= band.hi[e]);
            }
        }
    }

    #[test]
    fn bootstrap_is_deterministic_in_seed() {
        let curves: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, i as f64 * 2.0]).collect();
        let a = bootstrap_mean_ci(&curves, 200, 0.9, 5).unwrap();
        let b = bootstrap_mean_ci(&curves, 200, 0.9, 5).unwrap();
        assert_eq!(a, b);
        let c = bootstrap_mean_ci(&curves, 200, 0.9, 6).unwrap();
        assert_ne!(a.lo, c.lo);
    }

    #[test]
    fn degenerate_inputs_are_rejected() {
        assert!(bootstrap_mean_ci(&[vec![1.0]], 10, 0.95, 0).is_err());
        assert!(bootstrap_mean_ci(&[vec![1.0], vec![1.0, 2.0]], 10, 0.95, 0).is_err());
        assert!(bootstrap_mean_ci(&[vec![1.0], vec![2.0]], 10, 1.0, 0).is_err());
        assert!(bootstrap_mean_ci(&[vec![1.0], vec![2.0]], 0, 0.5, 0).is_err());
    }
}
