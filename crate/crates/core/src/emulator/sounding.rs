//! Predictive radiance curves: score draws from the hyperparameter mixture
//! mapped through each band's functional basis.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{FittedEmulator, PredictiveT};
use crate::bench::crps_sorted;
use crate::error::{check_dim, Error, Result};
use crate::fda::FunctionalBasis;
use crate::stats::{mean_sd, quantile_sorted};

/// Position of one emulated output within the per-band score vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputSlot {
    pub band: usize,
    pub component: usize,
}

/// Outputs emulated jointly, with one fitted model per retained
/// hyperparameter sample (equal mixture weights).
#[derive(Debug, Clone)]
pub struct EmulatorGroup {
    pub slots: Vec<OutputSlot>,
    pub models: Vec<FittedEmulator>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SoundingConfig {
    /// Predictive draws per input.
    pub draws: usize,
}

impl Default for SoundingConfig {
    fn default() -> Self {
        Self { draws: 1000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BandPrediction {
    pub band: String,
    pub wavelengths: Vec<f64>,
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    pub q025: Vec<f64>,
    pub q975: Vec<f64>,
    /// Empirical CRPS per wavelength against supplied truth (`NaN` where the
    /// truth is missing); empty without truth.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub crps: Vec<f64>,
}

fn draw_t<R: Rng + ?Sized>(pred: &PredictiveT, chol: Option<&DMatrix<f64>>, rng: &mut R) -> DVector<f64> {
    let Some(l) = chol else {
        return pred.location.clone();
    };
    let xi = DVector::from_iterator(pred.dim(), (0..pred.dim()).map(|_| rng.sample::<f64, _>(StandardNormal)));
    let nu = pred.dof as f64;
    let w: f64 = ChiSquared::new(nu).expect("positive dof").sample(rng);
    &pred.location + l * xi * (nu / w).sqrt()
}

fn scale_factor(scale: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    if scale.diagonal().iter().all(|&v| v == 0.0) {
        return None;
    }
    match scale.clone().cholesky() {
        Some(c) => Some(c.l()),
        None => {
            // Positive semidefinite up to rounding; fall back to a symmetric root.
            let e = scale.clone().symmetric_eigen();
            let d = e.eigenvalues.map(|v| v.max(0.0).sqrt());
            Some(&e.eigenvectors * DMatrix::from_diagonal(&d))
        }
    }
}

/// Score draws per band: entry `b` is `draws x n_components(b)`.
/// Draw `k` uses mixture member `floor(k * S / draws)`.
pub fn score_draws<R: Rng + ?Sized>(
    groups: &[EmulatorGroup],
    components: &[usize],
    x0: &[f64],
    draws: usize,
    rng: &mut R,
) -> Result<Vec<DMatrix<f64>>> {
    if draws == 0 {
        return Err(Error::InvalidParameter("number of predictive draws must be positive".into()));
    }
    let mut out: Vec<DMatrix<f64>> = components.iter().map(|&p| DMatrix::zeros(draws, p)).collect();
    let mut covered: Vec<Vec<bool>> = components.iter().map(|&p| vec![false; p]).collect();
    for g in groups {
        if g.models.is_empty() {
            return Err(Error::Data("emulator group has no fitted models".into()));
        }
        for s in &g.slots {
            let slot = covered
                .get_mut(s.band)
                .and_then(|b| b.get_mut(s.component))
                .ok_or_else(|| Error::Data(format!("slot band {} component {} out of range", s.band, s.component)))?;
            *slot = true;
        }
        let n_models = g.models.len();
        let mut cached: Option<(usize, PredictiveT, Option<DMatrix<f64>>)> = None;
        for k in 0..draws {
            let m = k * n_models / draws;
            if cached.as_ref().is_none_or(|c| c.0 != m) {
                let pred = g.models[m].predict(x0)?;
                let l = scale_factor(&pred.scale);
                cached = Some((m, pred, l));
            }
            let (_, pred, l) = cached.as_ref().expect("filled above");
            let v = draw_t(pred, l.as_ref(), rng);
            for (s, val) in g.slots.iter().zip(v.iter()) {
                out[s.band][(k, s.component)] = *val;
            }
        }
    }
    for (b, c) in covered.iter().enumerate() {
        if let Some(j) = c.iter().position(|v| !v) {
            return Err(Error::Data(format!("no emulator for band {b} component {j}")));
        }
    }
    Ok(out)
}

/// Predictive radiance summaries per band at `x0`, plus the score draws.
/// With `truth` (radiances per band on `grids`), also scores each wavelength.
pub fn emulate_sounding<R: Rng + ?Sized>(
    groups: &[EmulatorGroup],
    bases: &[FunctionalBasis],
    grids: &[Vec<f64>],
    x0: &[f64],
    config: &SoundingConfig,
    truth: Option<&[Vec<f64>]>,
    rng: &mut R,
) -> Result<(Vec<BandPrediction>, Vec<DMatrix<f64>>)> {
    if bases.len() != grids.len() {
        return Err(Error::Data(format!("{} bases but {} wavelength grids", bases.len(), grids.len())));
    }
    if let Some(t) = truth {
        check_dim("truth bands", grids.len(), t.len())?;
        for (g, y) in grids.iter().zip(t) {
            check_dim("truth wavelengths", g.len(), y.len())?;
        }
    }
    let components: Vec<usize> = bases.iter().map(|b| b.n_components()).collect();
    let draws = score_draws(groups, &components, x0, config.draws, rng)?;
    let mut bands = Vec::with_capacity(bases.len());
    for (b, ((basis, grid), scores)) in bases.iter().zip(grids).zip(&draws).enumerate() {
        let mu = basis.reconstruct(&vec![0.0; basis.n_components()], grid)?;
        let eta = basis.eigenfunctions(grid)?;
        let mut pred = BandPrediction {
            band: basis.band.clone(),
            wavelengths: grid.clone(),
            mean: Vec::with_capacity(grid.len()),
            sd: Vec::with_capacity(grid.len()),
            q025: Vec::with_capacity(grid.len()),
            q975: Vec::with_capacity(grid.len()),
            crps: Vec::new(),
        };
        let mut values = vec![0.0; scores.nrows()];
        for (j, m) in mu.iter().enumerate() {
            for (k, v) in values.iter_mut().enumerate() {
                let y = m + eta.iter().enumerate().map(|(l, e)| scores[(k, l)] * e[j]).sum::<f64>();
                *v = basis.to_radiance(y);
            }
            let (mean, sd) = mean_sd(&values);
            values.sort_unstable_by(f64::total_cmp);
            pred.mean.push(mean);
            pred.sd.push(sd);
            pred.q025.push(quantile_sorted(&values, 0.025));
            pred.q975.push(quantile_sorted(&values, 0.975));
            if let Some(t) = truth {
                let y = t[b][j];
                pred.crps.push(if y.is_nan() { f64::NAN } else { crps_sorted(&values, y)? });
            }
        }
        bands.push(pred);
    }
    Ok((bands, draws))
}
