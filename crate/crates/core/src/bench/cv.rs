use std::sync::Arc;
use std::time::Instant;

use nalgebra::DMatrix;
use serde::Serialize;

use super::metrics::{rmspe, MetricsReport};
use crate::emulator::dense::DenseGp;
use crate::emulator::{spec_from_params, FittedEmulator, PosteriorTarget, TrainingData};
use crate::error::{Error, Result};
use crate::inference::{map_estimate, FnTarget, NelderMeadOptions};
use crate::kernels::Inputs;
use crate::nngp::NngpStructure;
use crate::pipeline::{initial_ranges, locate_runs, projected_scores, train, validate, Checkpoint, Dataset, PipelineConfig, Predictor, RunPrediction, TrainOutput};

/// Outcome of one train/predict/score pass.
pub struct CrossValidation {
    pub report: MetricsReport,
    pub trained: TrainOutput,
    pub predictions: Vec<RunPrediction>,
}

/// Seeded split, training on the kept runs and scoring on the held-out runs.
pub fn cross_validate(ds: &Dataset, cfg: &PipelineConfig) -> Result<CrossValidation> {
    let trained = train(ds, cfg)?;
    let clock = Instant::now();
    let predictor = Predictor::new(trained.checkpoint.clone()).map_err(|e| e.in_stage("predict"))?;
    let holdout = locate_runs(ds, &trained.checkpoint.holdout_runs).map_err(|e| e.in_stage("predict"))?;
    let (mut report, predictions) = validate(&predictor, ds, &holdout, &cfg.prediction).map_err(|e| e.in_stage("predict"))?;
    report.runtimes = trained.runtimes.clone();
    report.runtimes.insert("predict".into(), clock.elapsed().as_secs_f64());
    Ok(CrossValidation { report, trained, predictions })
}

/// Score-level RMSPE of the plug-in NNGP and dense emulators on one output.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DenseComparison {
    pub group: String,
    pub band: String,
    pub component: usize,
    pub nngp_rmspe: f64,
    pub dense_rmspe: f64,
    /// NNGP posterior mode with every training run as a prediction neighbor.
    pub nngp_all_neighbors_rmspe: f64,
}

impl DenseComparison {
    /// `|nngp - dense| / dense`.
    pub fn relative_gap(&self) -> f64 {
        (self.nngp_rmspe - self.dense_rmspe).abs() / self.dense_rmspe
    }
}

/// Refits every emulator group on the first `n_sub` training runs of a
/// checkpoint, once with the NNGP likelihood and once with the dense GP,
/// each at its own posterior mode, and compares held-out score RMSPE.
pub fn dense_comparison(ckpt: &Checkpoint, ds: &Dataset, n_sub: usize, opts: &NelderMeadOptions) -> Result<Vec<DenseComparison>> {
    let n_train = ckpt.inputs.len();
    if n_sub > n_train {
        return Err(Error::Config(format!("sub-problem size {n_sub} exceeds {n_train} training runs")));
    }
    let idx: Vec<usize> = (0..n_sub).collect();
    let inputs: Inputs = ckpt.inputs.select(&idx);
    let e = &ckpt.emulator;
    let structure = Arc::new(NngpStructure::build(&inputs, e.ordering, e.neighbors, ckpt.seed)?);
    let holdout = locate_runs(ds, &ckpt.holdout_runs)?;
    if holdout.is_empty() {
        return Err(Error::Data("dense comparison needs held-out runs".into()));
    }
    let test_inputs: Vec<Vec<f64>> =
        holdout.iter().map(|&r| ckpt.reduced_input(&ds.states[r], &ds.geometry[r])).collect::<Result<_>>()?;
    let truth: Vec<DMatrix<f64>> =
        ckpt.bases.iter().enumerate().map(|(b, basis)| projected_scores(basis, &ds.spectra[b].select(&holdout))).collect::<Result<_>>()?;

    let mut out = Vec::new();
    for g in &ckpt.groups {
        let outputs = DMatrix::from_fn(n_sub, g.slots.len(), |i, k| ckpt.scores[g.slots[k].band][(i, g.slots[k].component)]);
        let mut init = initial_ranges(&inputs);
        init.push(e.initial_nugget);

        let data = Arc::new(TrainingData::new(Arc::clone(&structure), e.trend, &outputs)?);
        let mut target = PosteriorTarget::new(Arc::clone(&data), e.kernel);
        let nn_map = map_estimate(&mut target, &init, opts)?;
        let nn_spec = spec_from_params(e.kernel, &nn_map.params)?;
        let nn_all = FittedEmulator::from_fit(Arc::clone(&data), nn_spec.clone(), nn_map.summary.clone(), n_sub)?;
        let nn = FittedEmulator::from_fit(data, nn_spec, nn_map.summary, e.neighbors)?;

        let dense = DenseGp::new(inputs.clone(), e.trend, outputs.clone())?;
        let mut dense_target = FnTarget(|p: &[f64]| {
            spec_from_params(e.kernel, p)
                .and_then(|s| dense.fit(&s).map(|f| f.log_posterior()))
                .unwrap_or(f64::NEG_INFINITY)
        });
        let dense_map = map_estimate(&mut dense_target, &init, opts)?;
        let dense_spec = spec_from_params(e.kernel, &dense_map.params)?;
        let dense_fit = dense.fit(&dense_spec)?;
        log::info!("group {}: nngp mode {:.3}, dense mode {:.3}", g.name, nn_map.log_post, dense_map.log_post);

        let mut nn_pred = DMatrix::zeros(holdout.len(), g.slots.len());
        let mut dense_pred = DMatrix::zeros(holdout.len(), g.slots.len());
        let mut all_pred = DMatrix::zeros(holdout.len(), g.slots.len());
        for (i, x0) in test_inputs.iter().enumerate() {
            let a = nn.predict(x0)?;
            let b = dense_fit.predict(x0)?;
            let c = nn_all.kriging(x0)?.0;
            for k in 0..g.slots.len() {
                nn_pred[(i, k)] = a.location[k];
                dense_pred[(i, k)] = b.location[k];
                all_pred[(i, k)] = c[k];
            }
        }
        for (k, slot) in g.slots.iter().enumerate() {
            let t: Vec<f64> = truth[slot.band].column(slot.component).iter().copied().collect();
            out.push(DenseComparison {
                group: g.name.clone(),
                band: ckpt.bands[slot.band].clone(),
                component: slot.component + 1,
                nngp_rmspe: rmspe(&t, nn_pred.column(k).as_slice())?,
                dense_rmspe: rmspe(&t, dense_pred.column(k).as_slice())?,
                nngp_all_neighbors_rmspe: rmspe(&t, all_pred.column(k).as_slice())?,
            });
        }
    }
    Ok(out)
}
