use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::error::{check_dim, Error, Result};
use crate::stats::pairwise_sum;

/// Root mean squared difference over entries with finite truth.
pub fn rmspe(truth: &[f64], pred: &[f64]) -> Result<f64> {
    check_dim("rmspe prediction", truth.len(), pred.len())?;
    let sq: Vec<f64> = truth.iter().zip(pred).filter(|(t, _)| !t.is_nan()).map(|(t, p)| (t - p) * (t - p)).collect();
    if sq.is_empty() {
        return Err(Error::Data("rmspe needs at least one non-missing truth value".into()));
    }
    Ok((pairwise_sum(&sq) / sq.len() as f64).sqrt())
}

/// Fraction of finite-truth points inside `[lower, upper]`.
pub fn coverage_95(truth: &[f64], lower: &[f64], upper: &[f64]) -> Result<f64> {
    check_dim("coverage lower bounds", truth.len(), lower.len())?;
    check_dim("coverage upper bounds", truth.len(), upper.len())?;
    let mut hits = 0usize;
    let mut total = 0usize;
    for (i, ((t, lo), hi)) in truth.iter().zip(lower).zip(upper).enumerate() {
        if !(lo <= hi) {
            return Err(Error::InvalidParameter(format!("interval {i} has lower {lo} > upper {hi}")));
        }
        if t.is_nan() {
            continue;
        }
        total += 1;
        if lo <= t && t <= hi {
            hits += 1;
        }
    }
    if total == 0 {
        return Err(Error::Data("coverage needs at least one non-missing truth value".into()));
    }
    Ok(hits as f64 / total as f64)
}

/// Empirical CRPS `E|X - y| - E|X - X'|/2` of ascending samples.
pub fn crps_sorted(sorted: &[f64], y: f64) -> Result<f64> {
    let n = sorted.len();
    if n < 2 {
        return Err(Error::InvalidParameter(format!("empirical CRPS needs at least 2 samples, got {n}")));
    }
    let abs: Vec<f64> = sorted.iter().map(|x| (x - y).abs()).collect();
    // sum_{i,j} |x_i - x_j| = 2 sum_i (2i - n - 1) x_(i) with 1-based ranks
    let spread: Vec<f64> = sorted.iter().enumerate().map(|(i, x)| (2.0 * (i + 1) as f64 - n as f64 - 1.0) * x).collect();
    let nf = n as f64;
    Ok((pairwise_sum(&abs) / nf - pairwise_sum(&spread) / (nf * nf)).max(0.0))
}

pub fn crps_empirical(samples: &[f64], y: f64) -> Result<f64> {
    let mut s = samples.to_vec();
    s.sort_unstable_by(f64::total_cmp);
    crps_sorted(&s, y)
}

/// Closed-form CRPS of `N(mu, sigma^2)`.
pub fn crps_gaussian(mu: f64, sigma: f64, y: f64) -> Result<f64> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidParameter(format!("Gaussian CRPS needs sigma >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok((y - mu).abs());
    }
    let z = (y - mu) / sigma;
    let n = Normal::standard();
    Ok(sigma * (z * (2.0 * n.cdf(z) - 1.0) + 2.0 * n.pdf(z) - 1.0 / PI.sqrt()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreMetrics {
    pub band: String,
    pub component: usize,
    pub rmspe: f64,
    pub coverage: f64,
    pub crps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadianceMetrics {
    pub band: String,
    pub rmspe: f64,
    pub coverage: f64,
    /// Mean over wavelengths and held-out points.
    pub crps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointwiseRmspe {
    pub band: String,
    pub wavelengths: Vec<f64>,
    pub rmspe: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_train: usize,
    pub n_test: usize,
    pub scores: Vec<ScoreMetrics>,
    pub radiance: Vec<RadianceMetrics>,
    pub pointwise: Vec<PointwiseRmspe>,
    /// Wall-clock seconds per stage.
    pub runtimes: BTreeMap<String, f64>,
}

impl MetricsReport {
    /// Coverage pooled over all bands at radiance scale, weighting each band
    /// equally.
    pub fn radiance_coverage(&self) -> f64 {
        self.radiance.iter().map(|r| r.coverage).sum::<f64>() / self.radiance.len().max(1) as f64
    }

    /// The report with runtimes dropped, for determinism comparisons.
    pub fn without_runtimes(&self) -> Self {
        Self { runtimes: BTreeMap::new(), ..self.clone() }
    }

    pub fn write_json(&self, path: &std::path::Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::format(path, e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Writes `wavelength,band,rmspe` rows.
    pub fn write_pointwise_csv(&self, path: &std::path::Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
        let err = |e: csv::Error| Error::format(path, e.to_string());
        w.write_record(["wavelength", "band", "rmspe"]).map_err(err)?;
        for p in &self.pointwise {
            for (wl, r) in p.wavelengths.iter().zip(&p.rmspe) {
                w.write_record([wl.to_string(), p.band.clone(), r.to_string()]).map_err(err)?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn rmspe_examples() {
        assert_eq!(rmspe(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((rmspe(&[1.0, 2.0, 3.0], &[1.5, 2.5, 3.5]).unwrap() - 0.5).abs() < 1e-15);
        assert!((rmspe(&[0.0, 0.0], &[3.0, 4.0]).unwrap() - 12.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(rmspe(&[f64::NAN, 1.0], &[7.0, 1.0]).unwrap(), 0.0);
        assert!(rmspe(&[f64::NAN], &[0.0]).is_err());
        assert!(rmspe(&[1.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn coverage_examples() {
        let t = [0.3, -2.0, 5.0];
        let inf = [f64::INFINITY; 3];
        let ninf = [f64::NEG_INFINITY; 3];
        assert_eq!(coverage_95(&t, &ninf, &inf).unwrap(), 1.0);
        assert_eq!(coverage_95(&t, &t, &t).unwrap(), 1.0);
        assert!(coverage_95(&[0.0], &[1.0], &[0.0]).is_err());
    }

    #[test]
    fn coverage_of_calibrated_gaussian_intervals() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 10_000;
        let (mut t, mut lo, mut hi) = (Vec::new(), Vec::new(), Vec::new());
        for _ in 0..n {
            let mu: f64 = rng.random_range(-5.0..5.0);
            let sd: f64 = rng.random_range(0.1..2.0);
            t.push(mu + sd * rng.sample::<f64, _>(StandardNormal));
            lo.push(mu - 1.959964 * sd);
            hi.push(mu + 1.959964 * sd);
        }
        let c = coverage_95(&t, &lo, &hi).unwrap();
        assert!((c - 0.95).abs() < 0.01, "{c}");
    }

    #[test]
    fn crps_point_mass_and_scale() {
        assert_eq!(crps_empirical(&[2.0, 2.0], 2.0).unwrap(), 0.0);
        assert!(crps_empirical(&[2.0], 2.0).is_err());
        let x = [0.3, -1.2, 2.2, 0.9, 0.0];
        let a = 3.5;
        let xa: Vec<f64> = x.iter().map(|v| a * v).collect();
        let c1 = crps_empirical(&x, 0.4).unwrap();
        let c2 = crps_empirical(&xa, a * 0.4).unwrap();
        assert!((c2 - a * c1).abs() < 1e-12);
        assert_eq!(crps_gaussian(1.0, 0.0, 3.0).unwrap(), 2.0);
    }

    #[test]
    fn sorted_form_matches_double_sum() {
        let x: [f64; 6] = [0.3, -1.2, 2.2, 0.9, 0.0, 0.9];
        let y: f64 = 0.5;
        let n = x.len() as f64;
        let e1: f64 = x.iter().map(|v| (v - y).abs()).sum::<f64>() / n;
        let e2: f64 = x.iter().flat_map(|a| x.iter().map(move |b| (a - b).abs())).sum::<f64>() / (n * n);
        assert!((crps_empirical(&x, y).unwrap() - (e1 - 0.5 * e2)).abs() < 1e-14);
    }

    #[test]
    fn gaussian_crps_against_quadrature() {
        // integral of (Phi(t) - 1{t >= 0})^2 over [-12, 12], Simpson's rule
        let n = Normal::standard();
        let m = 240_000;
        let h = 24.0 / m as f64;
        let f = |t: f64| {
            let step = if t >= 0.0 { 1.0 } else { 0.0 };
            (n.cdf(t) - step).powi(2)
        };
        // split at 0 so the step does not sit inside a panel
        let simpson = |a: f64, k: usize| {
            let mut s = f(a) + f(a + k as f64 * h);
            for i in 1..k {
                s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
            }
            s * h / 3.0
        };
        let quad = simpson(-12.0, m / 2) + simpson(0.0, m / 2);
        let closed = crps_gaussian(0.0, 1.0, 0.0).unwrap();
        assert!((closed - quad).abs() < 1e-6, "{closed} vs {quad}");
        assert!((closed - 0.23370).abs() < 1e-5);
    }

    #[test]
    fn empirical_crps_converges_to_gaussian() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s: Vec<f64> = (0..10_000).map(|_| 1.0 + 2.0 * rng.sample::<f64, _>(StandardNormal)).collect();
        let e = crps_empirical(&s, 2.5).unwrap();
        let g = crps_gaussian(1.0, 2.0, 2.5).unwrap();
        assert!((e - g).abs() < 0.02 * g, "{e} vs {g}");
    }

    #[test]
    fn metrics_permutation_invariant() {
        let t = [0.1, 0.5, -0.3, 2.0];
        let p = [0.0, 0.7, -0.1, 1.5];
        let perm = [2, 0, 3, 1];
        let tp: Vec<f64> = perm.iter().map(|&i| t[i]).collect();
        let pp: Vec<f64> = perm.iter().map(|&i| p[i]).collect();
        assert!((rmspe(&t, &p).unwrap() - rmspe(&tp, &pp).unwrap()).abs() < 1e-15);
    }
}
