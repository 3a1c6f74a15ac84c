//! Priors, Metropolis–Hastings sampling and MAP estimation over positive
//! hyperparameters.

mod map;
mod mcmc;

use std::io::Write;
use std::path::Path;

pub use map::{map_estimate, nelder_mead, MapResult, NelderMeadOptions};
pub use mcmc::{mh_step, run_chain, ChainConfig, ChainOutput, ChainState, PosteriorSampleSet, Sweep};

use crate::error::{Error, Result};

/// `sum_j -ln(1 + lambda_j^2)`; `-inf` when any parameter is not positive.
pub fn log_prior(params: &[f64]) -> f64 {
    if params.iter().any(|&l| !(l > 0.0)) {
        return f64::NEG_INFINITY;
    }
    params.iter().map(|l| -(l * l).ln_1p()).sum()
}

/// CDF of the density `(2/pi) / (1 + lambda^2)` on `lambda > 0`.
pub fn prior_cdf(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        0.0
    } else {
        std::f64::consts::FRAC_2_PI * lambda.atan()
    }
}

/// Unnormalized log density with a per-evaluation summary carried along with
/// the chain state.
pub trait Target {
    type Summary: Clone;
    fn evaluate(&mut self, params: &[f64]) -> Result<(f64, Self::Summary)>;
}

/// Adapts a closure returning a log density.
pub struct FnTarget<F>(pub F);

impl<F: FnMut(&[f64]) -> f64> Target for FnTarget<F> {
    type Summary = ();

    fn evaluate(&mut self, params: &[f64]) -> Result<(f64, ())> {
        Ok(((self.0)(params), ()))
    }
}

/// Parameter names `theta_1..theta_d, tau2`.
pub fn parameter_names(input_dim: usize) -> Vec<String> {
    (1..=input_dim).map(|j| format!("theta_{j}")).chain(std::iter::once("tau2".to_string())).collect()
}

pub fn write_samples_csv(path: &Path, samples: &PosteriorSampleSet) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    w.write_record(&samples.names).map_err(|e| Error::format(path, e.to_string()))?;
    for row in &samples.samples {
        w.write_record(row.iter().map(|v| v.to_string()))
            .map_err(|e| Error::format(path, e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_samples_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let names = r
        .headers()
        .map_err(|e| Error::format(path, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::format(path, e.to_string()))?;
        let row = rec
            .iter()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::format(path, e.to_string()))?;
        rows.push(row);
    }
    Ok((names, rows))
}

pub fn write_trace_csv(path: &Path, samples: &PosteriorSampleSet) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "iteration,log_posterior").map_err(io)?;
    for (i, lp) in samples.trace.iter().enumerate() {
        writeln!(w, "{},{}", i + 1, lp).map_err(io)?;
    }
    w.flush().map_err(io)
}
