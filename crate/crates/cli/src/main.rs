use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use specemu::bench::cross_validate;
use specemu::pipeline::{
    fit_active_subspace, fit_bases, locate_runs, read_design, split_runs, validate, write_basis_reports, write_predictions_csv,
    write_training_outputs, Checkpoint, Dataset, Manifest, PipelineConfig, Predictor,
};
use specemu::{Error, ErrorKind, Result};

#[derive(Parser)]
#[command(name = "specemu", version, about = "Functional-output emulation of spectral simulators")]
struct Cli {
    /// JSON configuration file; built-in defaults when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config entry, e.g. `--set mcmc.iterations=500`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Output directory (the data directory for `synth`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Root seed for every random stream.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true, env = "SPECEMU_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Generate a synthetic design, spectra, noise table and Jacobians.
    Synth,
    /// Functional PCA per band on the training split.
    Fpca,
    /// Active subspace of the state from misfit gradients.
    Subspace,
    /// Fit every emulator and write the checkpoint and posterior samples.
    Train,
    /// Predict radiances for a design file or the held-out runs.
    Predict,
    /// Predict the held-out runs and score them against the data.
    Validate,
    /// Train, then validate on the held-out runs in one pass.
    Cv,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Fpca => "fpca",
            Command::Subspace => "subspace",
            Command::Train => "train",
            Command::Predict => "predict",
            Command::Validate => "validate",
            Command::Cv => "cv",
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::error!("thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(match e.kind() {
                ErrorKind::Config => 2,
                ErrorKind::Data => 3,
                ErrorKind::Numeric => 4,
            })
        }
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut overrides = cli.overrides.clone();
    if let Some(s) = cli.seed {
        overrides.push(format!("seed={s}"));
    }
    let mut cfg = PipelineConfig::load(cli.config.as_deref(), &overrides)?;
    if let Some(out) = &cli.out {
        if cli.command == Command::Synth {
            cfg.data_dir = out.clone();
        } else {
            cfg.out_dir = out.clone();
        }
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    let command = cli.command.name();
    let (dir, files) = match cli.command {
        Command::Synth => (cfg.data_dir.clone(), synth(&cfg)?),
        Command::Fpca => (cfg.out_dir.clone(), fpca(&cfg)?),
        Command::Subspace => (cfg.out_dir.clone(), subspace(&cfg)?),
        Command::Train => (cfg.out_dir.clone(), train(&cfg)?),
        Command::Predict => (cfg.out_dir.clone(), predict(&cfg)?),
        Command::Validate => (cfg.out_dir.clone(), validate_holdout(&cfg)?),
        Command::Cv => (cfg.out_dir.clone(), cv(&cfg)?),
    };
    let config = serde_json::to_value(&cfg).map_err(|e| Error::Config(e.to_string()))?;
    let path = Manifest::build(command, cfg.seed, config, &dir, &files)?.write(&dir)?;
    log::info!("{command}: wrote {} files, manifest {}", files.len(), path.display());
    Ok(())
}

/// Checks `dir/manifest_<command>.json` when an earlier stage left one.
fn verify_upstream(dir: &Path, command: &str) -> Result<()> {
    let path = dir.join(Manifest::file_name(command));
    if path.exists() {
        Manifest::read(&path)?.verify(dir)?;
        log::info!("verified {}", path.display());
    }
    Ok(())
}

fn load_data(cfg: &PipelineConfig) -> Result<Dataset> {
    verify_upstream(&cfg.data_dir, "synth")?;
    Dataset::load(&cfg.data_dir, &cfg.bands)
}

fn load_checkpoint(cfg: &PipelineConfig) -> Result<Checkpoint> {
    verify_upstream(&cfg.out_dir, "train")?;
    Checkpoint::read(&cfg.out_dir.join("checkpoint.json"))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.to_path_buf(), source: e })
}

fn synth(cfg: &PipelineConfig) -> Result<Vec<PathBuf>> {
    let ds = Dataset::synthesize(cfg)?;
    ds.write(&cfg.data_dir, cfg.synth.jacobians.unwrap_or(ds.len()))
}

fn fpca(cfg: &PipelineConfig) -> Result<Vec<PathBuf>> {
    let ds = load_data(cfg)?;
    let (train, _) = split_runs(ds.len(), cfg.holdout, cfg.seed)?;
    let bases: Vec<_> = fit_bases(&ds, &train, cfg)?.into_iter().map(|f| f.basis).collect();
    write_basis_reports(&cfg.out_dir, &bases, None)
}

fn subspace(cfg: &PipelineConfig) -> Result<Vec<PathBuf>> {
    let ds = load_data(cfg)?;
    let (train, _) = split_runs(ds.len(), cfg.holdout, cfg.seed)?;
    let (_, projection) = fit_active_subspace(&ds, &train, cfg)?;
    log::info!("active subspace dimension {}", projection.dim());
    write_basis_reports(&cfg.out_dir, &[], Some(&projection))
}

fn train(cfg: &PipelineConfig) -> Result<Vec<PathBuf>> {
    let ds = load_data(cfg)?;
    let out = specemu::pipeline::train(&ds, cfg)?;
    for (stage, secs) in &out.runtimes {
        log::info!("stage {stage}: {secs:.2} s");
    }
    write_training_outputs(&cfg.out_dir, &out.checkpoint)
}

fn predict(cfg: &PipelineConfig) -> Result<Vec<PathBuf>> {
    let predictor = Predictor::new(load_checkpoint(cfg)?)?;
    let (ids, states, geometry) = match &cfg.predict_design {
        Some(path) => read_design(path)?,
        None => {
            let ds = load_data(cfg)?;
            let runs = locate_runs(&ds, &predictor.checkpoint().holdout_runs)?;
            (
                runs.iter().map(|&r| ds.run_ids[r].clone()).collect(),
                runs.iter().map(|&r| ds.states[r].clone()).collect(),
                runs.iter().map(|&r| ds.geometry[r].clone()).collect(),
            )
        }
    };
    let preds = predictor.predict_many(&ids, &states, &geometry, &cfg.prediction, None)?;
    create_dir(&cfg.out_dir)?;
    let path = cfg.out_dir.join("predictions.csv");
    write_predictions_csv(&path, &preds)?;
    Ok(vec![path])
}

fn write_validation(dir: &Path, report: &specemu::bench::MetricsReport, preds: &[specemu::pipeline::RunPrediction]) -> Result<Vec<PathBuf>> {
    create_dir(dir)?;
    let metrics = dir.join("metrics.json");
    report.write_json(&metrics)?;
    let pointwise = dir.join("pointwise_rmspe.csv");
    report.write_pointwise_csv(&pointwise)?;
    let predictions = dir.join("predictions.csv");
    write_predictions_csv(&predictions, preds)?;
    Ok(vec![metrics, pointwise, predictions])
}

fn log_report(report: &specemu::bench::MetricsReport) {
    for s in &report.scores {
        log::info!("{} pc{}: rmspe {:.4e} coverage {:.3} crps {:.4e}", s.band, s.component, s.rmspe, s.coverage, s.crps);
    }
    for r in &report.radiance {
        log::info!("{} radiance: rmspe {:.4e} coverage {:.3} crps {:.4e}", r.band, r.rmspe, r.coverage, r.crps);
    }
}

fn validate_holdout(cfg: &PipelineConfig) -> Result<Vec<PathBuf>> {
    let predictor = Predictor::new(load_checkpoint(cfg)?)?;
    let ds = load_data(cfg)?;
    let runs = locate_runs(&ds, &predictor.checkpoint().holdout_runs)?;
    let (report, preds) = validate(&predictor, &ds, &runs, &cfg.prediction)?;
    log_report(&report);
    write_validation(&cfg.out_dir, &report.without_runtimes(), &preds)
}

fn cv(cfg: &PipelineConfig) -> Result<Vec<PathBuf>> {
    let ds = load_data(cfg)?;
    let result = cross_validate(&ds, cfg)?;
    log_report(&result.report);
    let mut files = write_training_outputs(&cfg.out_dir, &result.trained.checkpoint)?;
    files.extend(write_validation(&cfg.out_dir, &result.report, &result.predictions)?);
    Ok(files)
}
