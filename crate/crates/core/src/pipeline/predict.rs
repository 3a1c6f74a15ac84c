use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;

use super::data::{write_csv, Dataset};
use super::train::{group_spec, Checkpoint};
use crate::bench::metrics::{coverage_95, crps_sorted, rmspe, MetricsReport, PointwiseRmspe, RadianceMetrics, ScoreMetrics};
use crate::emulator::{emulate_sounding, BandPrediction, EmulatorGroup, FittedEmulator, SoundingConfig, TrainingData};
use crate::error::{check_dim, Error, Result};
use crate::fda::{fit_curves, FunctionalBasis, SpectralCurveSet};
use crate::nngp::NngpStructure;
use crate::rng;
use crate::stats::{pairwise_sum, quantile_sorted};

/// Emulator mixture rebuilt from a checkpoint.
pub struct Predictor {
    checkpoint: Checkpoint,
    groups: Vec<EmulatorGroup>,
}

/// Predictive summaries of one run.
#[derive(Debug, Clone)]
pub struct RunPrediction {
    pub run_id: String,
    pub bands: Vec<BandPrediction>,
    /// Score draws per band (`draws x p_b`).
    pub score_draws: Vec<DMatrix<f64>>,
}

impl Predictor {
    pub fn new(checkpoint: Checkpoint) -> Result<Self> {
        let e = &checkpoint.emulator;
        let structure = Arc::new(NngpStructure::build(&checkpoint.inputs, e.ordering, e.neighbors, checkpoint.seed)?);
        let n = structure.len();
        let mut groups = Vec::with_capacity(checkpoint.groups.len());
        for g in &checkpoint.groups {
            check_dim("group fits", g.samples.samples.len(), g.fits.len())?;
            let outputs = DMatrix::from_fn(n, g.slots.len(), |i, k| checkpoint.scores[g.slots[k].band][(i, g.slots[k].component)]);
            let data = Arc::new(TrainingData::new(Arc::clone(&structure), e.trend, &outputs)?);
            let models = g
                .fits
                .iter()
                .enumerate()
                .map(|(k, fit)| FittedEmulator::from_fit(Arc::clone(&data), group_spec(&checkpoint, g, k)?, fit.clone(), e.neighbors))
                .collect::<Result<_>>()?;
            groups.push(EmulatorGroup { slots: g.slots.clone(), models });
        }
        Ok(Self { checkpoint, groups })
    }

    pub fn checkpoint(&self) -> &Checkpoint {
        &self.checkpoint
    }

    /// Predicts one run; draws come from the stream named after `run_id`.
    pub fn predict_run(
        &self,
        run_id: &str,
        state: &[f64],
        geometry: &[f64],
        config: &SoundingConfig,
        truth: Option<&[Vec<f64>]>,
    ) -> Result<RunPrediction> {
        let x0 = self.checkpoint.reduced_input(state, geometry)?;
        let mut r = rng::stream(self.checkpoint.seed, &format!("predict/{run_id}"));
        let (bands, score_draws) =
            emulate_sounding(&self.groups, &self.checkpoint.bases, &self.checkpoint.wavelengths, &x0, config, truth, &mut r)?;
        Ok(RunPrediction { run_id: run_id.to_string(), bands, score_draws })
    }

    /// Predicts many runs in parallel; results follow input order.
    pub fn predict_many(
        &self,
        run_ids: &[String],
        states: &[Vec<f64>],
        geometry: &[Vec<f64>],
        config: &SoundingConfig,
        truth: Option<&[Vec<Vec<f64>>]>,
    ) -> Result<Vec<RunPrediction>> {
        check_dim("prediction states", run_ids.len(), states.len())?;
        check_dim("prediction geometry", run_ids.len(), geometry.len())?;
        (0..run_ids.len())
            .into_par_iter()
            .map(|i| self.predict_run(&run_ids[i], &states[i], &geometry[i], config, truth.map(|t| t[i].as_slice())))
            .collect()
    }
}

/// Writes `run_id,band,wavelength,mean,sd,q025,q975`.
pub fn write_predictions_csv(path: &Path, preds: &[RunPrediction]) -> Result<()> {
    let header = ["run_id", "band", "wavelength", "mean", "sd", "q025", "q975"].map(String::from).to_vec();
    let rows = preds.iter().flat_map(|p| {
        p.bands.iter().flat_map(move |b| {
            (0..b.wavelengths.len()).map(move |j| {
                vec![
                    p.run_id.clone(),
                    b.band.clone(),
                    b.wavelengths[j].to_string(),
                    b.mean[j].to_string(),
                    b.sd[j].to_string(),
                    b.q025[j].to_string(),
                    b.q975[j].to_string(),
                ]
            })
        })
    });
    write_csv(path, &header, rows)
}

/// Indices of `ids` within the dataset's run ids.
pub fn locate_runs(ds: &Dataset, ids: &[String]) -> Result<Vec<usize>> {
    let index: std::collections::HashMap<&str, usize> = ds.run_ids.iter().enumerate().map(|(i, r)| (r.as_str(), i)).collect();
    ids.iter()
        .map(|id| index.get(id.as_str()).copied().ok_or_else(|| Error::Data(format!("run {id} not found in dataset"))))
        .collect()
}

/// Scores of curves projected on a fitted basis (`n x p`).
pub fn projected_scores(basis: &FunctionalBasis, curves: &SpectralCurveSet) -> Result<DMatrix<f64>> {
    let coefs = fit_curves(curves, &basis.system)?.coefs;
    Ok(basis.scores_matrix(&basis.center(&coefs)))
}

/// Predicts the runs `runs` of `ds` and scores them at score and radiance
/// level.
pub fn validate(predictor: &Predictor, ds: &Dataset, runs: &[usize], config: &SoundingConfig) -> Result<(MetricsReport, Vec<RunPrediction>)> {
    if runs.is_empty() {
        return Err(Error::Data("no held-out runs to validate".into()));
    }
    let ckpt = predictor.checkpoint();
    check_dim("dataset bands", ckpt.bands.len(), ds.spectra.len())?;
    let ids: Vec<String> = runs.iter().map(|&r| ds.run_ids[r].clone()).collect();
    let states: Vec<Vec<f64>> = runs.iter().map(|&r| ds.states[r].clone()).collect();
    let geometry: Vec<Vec<f64>> = runs.iter().map(|&r| ds.geometry[r].clone()).collect();
    let truth: Vec<Vec<Vec<f64>>> = runs.iter().map(|&r| ds.spectra.iter().map(|s| s.curve(r).to_vec()).collect()).collect();
    let preds = predictor.predict_many(&ids, &states, &geometry, config, Some(&truth))?;

    let mut report = MetricsReport { n_train: ckpt.train_runs.len(), n_test: runs.len(), ..Default::default() };
    for (b, basis) in ckpt.bases.iter().enumerate() {
        let true_scores = projected_scores(basis, &ds.spectra[b].select(runs))?;
        for l in 0..basis.n_components() {
            let t: Vec<f64> = true_scores.column(l).iter().copied().collect();
            let mut mean = Vec::with_capacity(runs.len());
            let mut lo = Vec::with_capacity(runs.len());
            let mut hi = Vec::with_capacity(runs.len());
            let mut crps = Vec::with_capacity(runs.len());
            for (p, y) in preds.iter().zip(&t) {
                let mut d: Vec<f64> = p.score_draws[b].column(l).iter().copied().collect();
                mean.push(pairwise_sum(&d) / d.len() as f64);
                d.sort_unstable_by(f64::total_cmp);
                lo.push(quantile_sorted(&d, 0.025));
                hi.push(quantile_sorted(&d, 0.975));
                crps.push(crps_sorted(&d, *y)?);
            }
            report.scores.push(ScoreMetrics {
                band: basis.band.clone(),
                component: l + 1,
                rmspe: rmspe(&t, &mean)?,
                coverage: coverage_95(&t, &lo, &hi)?,
                crps: pairwise_sum(&crps) / crps.len() as f64,
            });
        }

        let flat = |f: &dyn Fn(&BandPrediction) -> &[f64]| -> Vec<f64> { preds.iter().flat_map(|p| f(&p.bands[b]).iter().copied()).collect() };
        let t: Vec<f64> = truth.iter().flat_map(|r| r[b].iter().copied()).collect();
        let crps: Vec<f64> = flat(&|p| &p.crps).into_iter().filter(|v| !v.is_nan()).collect();
        report.radiance.push(RadianceMetrics {
            band: basis.band.clone(),
            rmspe: rmspe(&t, &flat(&|p| &p.mean))?,
            coverage: coverage_95(&t, &flat(&|p| &p.q025), &flat(&|p| &p.q975))?,
            crps: pairwise_sum(&crps) / crps.len().max(1) as f64,
        });
        let grid = &ckpt.wavelengths[b];
        let pointwise = (0..grid.len())
            .map(|j| {
                let tj: Vec<f64> = truth.iter().map(|r| r[b][j]).collect();
                let pj: Vec<f64> = preds.iter().map(|p| p.bands[b].mean[j]).collect();
                rmspe(&tj, &pj).unwrap_or(f64::NAN)
            })
            .collect();
        report.pointwise.push(PointwiseRmspe { band: basis.band.clone(), wavelengths: grid.clone(), rmspe: pointwise });
    }
    Ok((report, preds))
}
