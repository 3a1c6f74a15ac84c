use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{EmulatorSettings, Estimation, PipelineConfig};
use super::data::{write_csv, Dataset};
use crate::emulator::{spec_from_params, GpFit, OutputSlot, PosteriorTarget, TrainingData};
use crate::error::{Error, Result};
use crate::fda::{BasisFit, FunctionalBasis};
use crate::inference::{
    map_estimate, parameter_names, run_chain, write_samples_csv, write_trace_csv, NelderMeadOptions, PosteriorSampleSet,
};
use crate::kernels::{Inputs, KernelSpec};
use crate::nngp::NngpStructure;
use crate::rng;
use crate::stats::quantile_sorted;
use crate::subspace::{active_subspace, batch_gradients, misfit_gradient, sensitivity_matrix, ActiveProjection, StateStandardizer};

pub const SCHEMA_VERSION: u32 = 1;

/// Hyperparameter draws of one emulator group with the fitted summaries
/// needed for prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupCheckpoint {
    pub name: String,
    pub slots: Vec<OutputSlot>,
    pub samples: PosteriorSampleSet,
    pub fits: Vec<GpFit>,
}

/// Everything needed to predict without the training data files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub seed: u64,
    pub emulator: EmulatorSettings,
    pub bands: Vec<String>,
    pub wavelengths: Vec<Vec<f64>>,
    pub bases: Vec<FunctionalBasis>,
    pub standardizer: StateStandardizer,
    pub projection: ActiveProjection,
    /// Column standardization of `(s, b)`.
    pub input_scaler: StateStandardizer,
    pub train_runs: Vec<String>,
    pub holdout_runs: Vec<String>,
    /// Scaled reduced inputs of the training runs, in run order.
    pub inputs: Inputs,
    /// Training scores per band (`n x p_b`).
    pub scores: Vec<DMatrix<f64>>,
    pub groups: Vec<GroupCheckpoint>,
}

impl Checkpoint {
    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| Error::format(path, e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        let version = value.get("schema_version").and_then(|v| v.as_u64());
        if version != Some(SCHEMA_VERSION as u64) {
            return Err(Error::format(path, format!("checkpoint schema {version:?} does not match {SCHEMA_VERSION}")));
        }
        serde_json::from_value(value).map_err(|e| Error::format(path, e.to_string()))
    }

    /// Reduced, scaled emulator input of one run.
    pub fn reduced_input(&self, state: &[f64], geometry: &[f64]) -> Result<Vec<f64>> {
        let s = self.projection.project(&self.standardizer.standardize(state)?)?;
        let row: Vec<f64> = s.into_iter().chain(geometry.iter().copied()).collect();
        self.input_scaler.standardize(&row)
    }
}

/// A trained model plus stage timings (seconds).
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub checkpoint: Checkpoint,
    pub runtimes: BTreeMap<String, f64>,
}

/// Seeded split of run indices into `(train, holdout)`, both ascending.
pub fn split_runs(n: usize, holdout: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if holdout >= n {
        return Err(Error::Config(format!("holdout {holdout} leaves no training runs out of {n}")));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng::stream(seed, "split"));
    let mut test = perm[..holdout].to_vec();
    let mut train = perm[holdout..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    Ok((train, test))
}

/// Emulator groups: one separable group per band listed in `sep_bands`,
/// otherwise one independent emulator per component.
pub fn plan_groups(bands: &[String], components: &[usize], sep_bands: &[usize]) -> Vec<(String, Vec<OutputSlot>)> {
    let mut out = Vec::new();
    for (b, (name, &p)) in bands.iter().zip(components).enumerate() {
        if sep_bands.contains(&b) || p == 1 {
            out.push((name.clone(), (0..p).map(|component| OutputSlot { band: b, component }).collect()));
        } else {
            for component in 0..p {
                out.push((format!("{name}_pc{}", component + 1), vec![OutputSlot { band: b, component }]));
            }
        }
    }
    out
}

/// Per-dimension median absolute pairwise difference over the first 200 rows.
pub fn initial_ranges(inputs: &Inputs) -> Vec<f64> {
    let m = inputs.len().min(200);
    (0..inputs.dim())
        .map(|j| {
            let mut d: Vec<f64> = Vec::with_capacity(m * (m - 1) / 2);
            for a in 0..m {
                for b in 0..a {
                    d.push((inputs.row(a)[j] - inputs.row(b)[j]).abs());
                }
            }
            d.sort_unstable_by(f64::total_cmp);
            let med = if d.is_empty() { 1.0 } else { quantile_sorted(&d, 0.5) };
            if med > 0.0 {
                med
            } else {
                1.0
            }
        })
        .collect()
}

fn nan_mean_columns(rows: &[Vec<f64>]) -> Vec<f64> {
    let m = rows.first().map_or(0, Vec::len);
    (0..m)
        .map(|j| {
            let (s, c) = rows.iter().map(|r| r[j]).filter(|v| !v.is_nan()).fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
            if c == 0 {
                f64::NAN
            } else {
                s / c as f64
            }
        })
        .collect()
}

fn fit_subspace(ds: &Dataset, train: &[usize], standardizer: &StateStandardizer, cfg: &PipelineConfig) -> Result<ActiveProjection> {
    let jac = ds.jacobians.as_ref().ok_or_else(|| Error::Data("no Jacobians available for the active subspace".into()))?;
    let runs: Vec<usize> = train.iter().copied().filter(|&r| jac.available(r)).take(cfg.subspace.samples).collect();
    if runs.is_empty() {
        return Err(Error::Data("no training run has a Jacobian".into()));
    }
    if runs.len() < cfg.subspace.samples {
        log::warn!("only {} of {} requested subspace gradients available", runs.len(), cfg.subspace.samples);
    }
    let spectra = |r: usize| -> Vec<f64> { ds.spectra.iter().flat_map(|s| s.curve(r).iter().copied()).collect() };
    let reference = nan_mean_columns(&train.iter().map(|&r| spectra(r)).collect::<Vec<_>>());
    let noise: Vec<f64> = ds.noise_var.concat();
    let grads = batch_gradients(runs.len(), |k| {
        let r = runs[k];
        misfit_gradient(&reference, &spectra(r), &jac.jacobian(r)?, &standardizer.scale, &noise)
    })?;
    active_subspace(&sensitivity_matrix(&grads)?, cfg.subspace.selection)
}

/// Per-band FPCA on the runs `train`.
pub fn fit_bases(ds: &Dataset, train: &[usize], cfg: &PipelineConfig) -> Result<Vec<BasisFit>> {
    let fits: Vec<BasisFit> = ds
        .spectra
        .iter()
        .map(|s| FunctionalBasis::build(&s.select(train), &cfg.fpca))
        .collect::<Result<_>>()
        .map_err(|e| e.in_stage("fpca"))?;
    for f in &fits {
        log::info!("band {}: {} components, {:.6} explained", f.basis.band, f.basis.n_components(), f.basis.cumulative_explained());
    }
    Ok(fits)
}

/// State standardizer and active subspace fitted on the runs `train`.
pub fn fit_active_subspace(ds: &Dataset, train: &[usize], cfg: &PipelineConfig) -> Result<(StateStandardizer, ActiveProjection)> {
    let train_states: Vec<Vec<f64>> = train.iter().map(|&r| ds.states[r].clone()).collect();
    let standardizer = StateStandardizer::fit(&train_states).map_err(|e| e.in_stage("subspace"))?;
    let projection = fit_subspace(ds, train, &standardizer, cfg).map_err(|e| e.in_stage("subspace"))?;
    Ok((standardizer, projection))
}

fn estimate_group(
    name: &str,
    slots: &[OutputSlot],
    structure: &Arc<NngpStructure>,
    scores: &[DMatrix<f64>],
    cfg: &PipelineConfig,
) -> Result<GroupCheckpoint> {
    let n = structure.len();
    let outputs = DMatrix::from_fn(n, slots.len(), |i, k| scores[slots[k].band][(i, slots[k].component)]);
    let data = Arc::new(TrainingData::new(Arc::clone(structure), cfg.emulator.trend, &outputs)?);
    let mut target = PosteriorTarget::new(Arc::clone(&data), cfg.emulator.kernel);
    let mut init = initial_ranges(structure.inputs());
    init.push(cfg.emulator.initial_nugget);
    let names = parameter_names(data.input_dim());
    let (samples, fits) = match cfg.emulator.estimation {
        Estimation::Mcmc => {
            let mut chain = cfg.mcmc.clone();
            chain.seed = rng::stream(cfg.seed, &format!("mcmc/{name}")).next_u64();
            let out = run_chain(&mut target, names, &init, &chain)?;
            (out.samples, out.summaries)
        }
        Estimation::Map => {
            let opts = NelderMeadOptions { max_evals: cfg.emulator.map_evaluations, ..Default::default() };
            let r = map_estimate(&mut target, &init, &opts)?;
            let set = PosteriorSampleSet {
                names,
                samples: vec![r.params],
                acceptance: Vec::new(),
                trace: vec![r.log_post],
                steps: Vec::new(),
            };
            (set, vec![r.summary])
        }
    };
    log::info!("group {name}: {} retained draws", samples.samples.len());
    Ok(GroupCheckpoint { name: name.to_string(), slots: slots.to_vec(), samples, fits })
}

/// FPCA, active subspace, NNGP structure and hyperparameter estimation on
/// the training split of `ds`.
pub fn train(ds: &Dataset, cfg: &PipelineConfig) -> Result<TrainOutput> {
    cfg.validate()?;
    ds.validate()?;
    if ds.spectra.len() != cfg.bands.len() || ds.spectra.iter().zip(&cfg.bands).any(|(s, b)| &s.band != b) {
        return Err(Error::Config("dataset bands do not match the configured bands".into()));
    }
    let mut runtimes = BTreeMap::new();
    let mut clock = Instant::now();
    let mut lap = |stage: &str, runtimes: &mut BTreeMap<String, f64>| {
        runtimes.insert(stage.to_string(), clock.elapsed().as_secs_f64());
        clock = Instant::now();
    };

    let (train, holdout) = split_runs(ds.len(), cfg.holdout, cfg.seed).map_err(|e| e.in_stage("split"))?;

    let fits = fit_bases(ds, &train, cfg)?;
    lap("fpca", &mut runtimes);

    let (standardizer, projection) = fit_active_subspace(ds, &train, cfg)?;
    log::info!("active subspace dimension {}", projection.dim());
    lap("subspace", &mut runtimes);

    let reduced: Vec<Vec<f64>> = train
        .iter()
        .map(|&r| {
            let s = projection.project(&standardizer.standardize(&ds.states[r])?)?;
            Ok(s.into_iter().chain(ds.geometry[r].iter().copied()).collect())
        })
        .collect::<Result<_>>()
        .map_err(|e: Error| e.in_stage("nngp"))?;
    let input_scaler = StateStandardizer::fit(&reduced).map_err(|e| e.in_stage("nngp"))?;
    let scaled: Vec<Vec<f64>> = reduced.iter().map(|r| input_scaler.standardize(r)).collect::<Result<_>>()?;
    let inputs = Inputs::from_rows(&scaled).map_err(|e| e.in_stage("nngp"))?;
    let structure = Arc::new(
        NngpStructure::build(&inputs, cfg.emulator.ordering, cfg.emulator.neighbors, cfg.seed).map_err(|e| e.in_stage("nngp"))?,
    );
    lap("nngp", &mut runtimes);

    let scores: Vec<DMatrix<f64>> = fits.iter().map(|f| f.scores.clone()).collect();
    let components: Vec<usize> = fits.iter().map(|f| f.basis.n_components()).collect();
    let plan = plan_groups(&cfg.bands, &components, &cfg.emulator.sep_bands);
    let groups: Vec<GroupCheckpoint> = plan
        .par_iter()
        .map(|(name, slots)| estimate_group(name, slots, &structure, &scores, cfg))
        .collect::<Result<_>>()
        .map_err(|e| e.in_stage("inference"))?;
    lap("inference", &mut runtimes);

    let checkpoint = Checkpoint {
        schema_version: SCHEMA_VERSION,
        seed: cfg.seed,
        emulator: cfg.emulator.clone(),
        bands: cfg.bands.clone(),
        wavelengths: ds.spectra.iter().map(|s| s.wavelengths.clone()).collect(),
        bases: fits.into_iter().map(|f| f.basis).collect(),
        standardizer,
        projection,
        input_scaler,
        train_runs: train.iter().map(|&r| ds.run_ids[r].clone()).collect(),
        holdout_runs: holdout.iter().map(|&r| ds.run_ids[r].clone()).collect(),
        inputs,
        scores,
        groups,
    };
    Ok(TrainOutput { checkpoint, runtimes })
}

/// Writes FPCA and subspace eigenvalue tables.
pub fn write_basis_reports(dir: &Path, bases: &[FunctionalBasis], projection: Option<&ActiveProjection>) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    if !bases.is_empty() {
        let path = dir.join("fpca_eigenvalues.csv");
        let header: Vec<String> = ["band", "component", "eigenvalue", "explained", "cumulative", "retained"].map(String::from).to_vec();
        let rows = bases.iter().flat_map(|b| {
            let explained = b.explained();
            let mut cum = 0.0;
            let p = b.n_components();
            b.eigenvalues.iter().zip(explained).enumerate().map(move |(l, (v, e))| {
                cum += e;
                vec![b.band.clone(), (l + 1).to_string(), v.to_string(), e.to_string(), cum.to_string(), (l < p).to_string()]
            })
        });
        write_csv(&path, &header, rows)?;
        out.push(path);
    }
    if let Some(pr) = projection {
        let path = dir.join("subspace_eigenvalues.csv");
        let rows = pr.eigenvalues.iter().enumerate().map(|(k, v)| vec![(k + 1).to_string(), v.to_string(), (k < pr.dim()).to_string()]);
        write_csv(&path, &["component".into(), "eigenvalue".into(), "retained".into()], rows)?;
        out.push(path);
        let path = dir.join("projection.csv");
        let header: Vec<String> = (1..=pr.dim()).map(|k| format!("p_{k}")).collect();
        let m = pr.matrix();
        write_csv(&path, &header, m.row_iter().map(|r| r.iter().map(|v| v.to_string()).collect()))?;
        out.push(path);
    }
    Ok(out)
}

/// Writes the checkpoint, per-group sample and trace CSVs, the chain
/// summary and eigenvalue tables into `dir`.
pub fn write_training_outputs(dir: &Path, ckpt: &Checkpoint) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    let path = dir.join("checkpoint.json");
    ckpt.write(&path)?;
    out.push(path);
    for g in &ckpt.groups {
        let p = dir.join(format!("samples_{}.csv", g.name));
        write_samples_csv(&p, &g.samples)?;
        out.push(p);
        let p = dir.join(format!("trace_{}.csv", g.name));
        write_trace_csv(&p, &g.samples)?;
        out.push(p);
    }
    let path = dir.join("chain_summary.csv");
    let rows = ckpt.groups.iter().flat_map(|g| {
        g.samples.names.iter().enumerate().map(move |(j, n)| {
            let mut col: Vec<f64> = g.samples.samples.iter().map(|r| r[j]).collect();
            col.sort_unstable_by(f64::total_cmp);
            vec![
                g.name.clone(),
                n.clone(),
                g.samples.acceptance.get(j).map_or(String::new(), |v| v.to_string()),
                g.samples.steps.get(j).map_or(String::new(), |v| v.to_string()),
                quantile_sorted(&col, 0.5).to_string(),
                quantile_sorted(&col, 0.05).to_string(),
                quantile_sorted(&col, 0.95).to_string(),
            ]
        })
    });
    let header = ["group", "parameter", "acceptance", "step", "median", "q05", "q95"].map(String::from).to_vec();
    write_csv(&path, &header, rows)?;
    out.push(path);
    out.extend(write_basis_reports(dir, &ckpt.bases, Some(&ckpt.projection))?);
    Ok(out)
}

/// Kernel spec of retained draw `k` of a group.
pub(crate) fn group_spec(ckpt: &Checkpoint, g: &GroupCheckpoint, k: usize) -> Result<KernelSpec> {
    spec_from_params(ckpt.emulator.kernel, &g.samples.samples[k])
}
