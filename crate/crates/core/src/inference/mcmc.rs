use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::Target;
use crate::error::{Error, Result};
use crate::rng::{self, StreamRng};

/// How one iteration updates the parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sweep {
    /// One scalar proposal per parameter per iteration.
    #[default]
    Componentwise,
    /// One proposal moving all parameters together.
    Joint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub retained: usize,
    /// Initial log-space proposal step for every parameter.
    pub initial_step: f64,
    /// Iterations between step-size updates during burn-in.
    pub adapt_window: usize,
    pub target_acceptance: f64,
    pub sweep: Sweep,
    pub seed: u64,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            iterations: 3500,
            burn_in: 500,
            retained: 3000,
            initial_step: 0.3,
            adapt_window: 25,
            target_acceptance: 0.35,
            sweep: Sweep::Componentwise,
            seed: 0,
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.burn_in > self.iterations {
            return Err(Error::Config(format!("burn-in {} exceeds iterations {}", self.burn_in, self.iterations)));
        }
        if self.retained > self.iterations - self.burn_in {
            return Err(Error::Config(format!(
                "retained {} exceeds iterations minus burn-in {}",
                self.retained,
                self.iterations - self.burn_in
            )));
        }
        if self.retained == 0 {
            return Err(Error::Config("retained must be positive".into()));
        }
        if !(self.initial_step >= 0.0 && self.initial_step.is_finite()) {
            return Err(Error::Config(format!("invalid initial step {}", self.initial_step)));
        }
        if self.adapt_window == 0 {
            return Err(Error::Config("adaptation window must be positive".into()));
        }
        if !(self.target_acceptance > 0.0 && self.target_acceptance < 1.0) {
            return Err(Error::Config(format!("target acceptance {} outside (0, 1)", self.target_acceptance)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ChainState<S> {
    pub params: Vec<f64>,
    pub log_post: f64,
    pub summary: S,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSampleSet {
    pub names: Vec<String>,
    /// Retained draws, one row per iteration.
    pub samples: Vec<Vec<f64>>,
    /// Per-parameter acceptance rate after burn-in.
    pub acceptance: Vec<f64>,
    /// Log posterior after every iteration, burn-in included.
    pub trace: Vec<f64>,
    /// Step sizes frozen at the end of burn-in.
    pub steps: Vec<f64>,
}

pub struct ChainOutput<S> {
    pub samples: PosteriorSampleSet,
    /// Target summaries matching `samples.samples`.
    pub summaries: Vec<S>,
}

fn try_move<T: Target, R: Rng + ?Sized>(
    state: &mut ChainState<T::Summary>,
    proposal: Vec<f64>,
    target: &mut T,
    rng: &mut R,
) -> bool {
    if proposal.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
        return false;
    }
    let (lp, summary) = match target.evaluate(&proposal) {
        Ok(v) => v,
        Err(e) => {
            log::debug!("proposal rejected: {e}");
            return false;
        }
    };
    if lp.is_nan() {
        log::warn!("target returned NaN; rejecting proposal");
        return false;
    }
    // log-normal proposal asymmetry: q(x | x') / q(x' | x) = prod x'_j / x_j
    let jacobian: f64 = proposal.iter().zip(&state.params).map(|(a, b)| (a / b).ln()).sum();
    let log_ratio = lp - state.log_post + jacobian;
    let u: f64 = rng.random();
    if u.ln() <= log_ratio {
        *state = ChainState { params: proposal, log_post: lp, summary };
        true
    } else {
        false
    }
}

/// One MH iteration with log-normal random-walk proposals
/// `lambda' = lambda * exp(s * xi)`. Returns per-parameter accept flags.
pub fn mh_step<T: Target, R: Rng + ?Sized>(
    state: &mut ChainState<T::Summary>,
    target: &mut T,
    steps: &[f64],
    sweep: Sweep,
    rng: &mut R,
) -> Vec<bool> {
    let d = state.params.len();
    match sweep {
        Sweep::Componentwise => (0..d)
            .map(|j| {
                let xi: f64 = rng.sample(StandardNormal);
                let mut prop = state.params.clone();
                prop[j] *= (steps[j] * xi).exp();
                try_move(state, prop, target, rng)
            })
            .collect(),
        Sweep::Joint => {
            let prop = state
                .params
                .iter()
                .zip(steps)
                .map(|(p, s)| p * (s * rng.sample::<f64, _>(StandardNormal)).exp())
                .collect();
            vec![try_move(state, prop, target, rng); d]
        }
    }
}

/// Robbins–Monro update of log step sizes from one window's acceptance.
fn adapt(steps: &mut [f64], accepted: &[usize], window: usize, round: usize, target: f64) {
    let gain = 1.0 / (round as f64).sqrt();
    for (s, &a) in steps.iter_mut().zip(accepted) {
        let rate = a as f64 / window as f64;
        if a == 0 {
            log::warn!("no proposals accepted over an adaptation window; shrinking step {s:.3e}");
        }
        *s *= (gain * (rate - target)).exp();
    }
}

/// Runs one chain. Step sizes adapt during burn-in only; the last
/// `retained` iterations are kept.
pub fn run_chain<T: Target>(
    target: &mut T,
    names: Vec<String>,
    init: &[f64],
    config: &ChainConfig,
) -> Result<ChainOutput<T::Summary>> {
    config.validate()?;
    let d = init.len();
    if names.len() != d {
        return Err(Error::DimensionMismatch { context: "parameter names", expected: d, found: names.len() });
    }
    let (lp0, s0) = target.evaluate(init)?;
    if !lp0.is_finite() {
        return Err(Error::Numeric(format!("log posterior at the initial point is {lp0}")));
    }
    let mut rng: StreamRng = rng::stream(config.seed, "mcmc");
    let mut state = ChainState { params: init.to_vec(), log_post: lp0, summary: s0 };
    let mut steps = vec![config.initial_step; d];
    let mut window_acc = vec![0usize; d];
    let mut round = 0;
    let mut burn_log: Vec<Vec<f64>> = Vec::new();
    let mut post_acc = vec![0usize; d];
    let keep_from = config.iterations - config.retained;
    let mut samples = Vec::with_capacity(config.retained);
    let mut summaries = Vec::with_capacity(config.retained);
    let mut trace = Vec::with_capacity(config.iterations);

    for it in 0..config.iterations {
        let acc = mh_step(&mut state, target, &steps, config.sweep, &mut rng);
        trace.push(state.log_post);
        if it < config.burn_in {
            for (w, a) in window_acc.iter_mut().zip(&acc) {
                *w += usize::from(*a);
            }
            if config.sweep == Sweep::Joint {
                burn_log.push(state.params.iter().map(|v| v.ln()).collect());
            }
            if (it + 1) % config.adapt_window == 0 {
                round += 1;
                adapt(&mut steps, &window_acc, config.adapt_window, round, config.target_acceptance);
                window_acc.fill(0);
            }
            if config.sweep == Sweep::Joint && it + 1 == config.burn_in / 2 {
                reshape_joint_steps(&mut steps, &burn_log);
                round = 0;
            }
        } else {
            for (c, a) in post_acc.iter_mut().zip(&acc) {
                *c += usize::from(*a);
            }
        }
        if it >= keep_from {
            samples.push(state.params.clone());
            summaries.push(state.summary.clone());
        }
    }
    let post = (config.iterations - config.burn_in).max(1) as f64;
    Ok(ChainOutput {
        samples: PosteriorSampleSet {
            names,
            samples,
            acceptance: post_acc.iter().map(|&c| c as f64 / post).collect(),
            trace,
            steps,
        },
        summaries,
    })
}

/// Rescales joint proposal steps to the spread of the burn-in history,
/// `2.38 / sqrt(d)` times the per-parameter log-space standard deviation.
fn reshape_joint_steps(steps: &mut [f64], history: &[Vec<f64>]) {
    let d = steps.len();
    let half = &history[history.len() / 2..];
    if half.len() < 10 {
        return;
    }
    for (j, s) in steps.iter_mut().enumerate() {
        let col: Vec<f64> = half.iter().map(|r| r[j]).collect();
        let (_, sd) = crate::stats::mean_sd(&col);
        if sd > 0.0 {
            *s = 2.38 / (d as f64).sqrt() * sd;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::{log_prior, prior_cdf, FnTarget};

    #[test]
    fn zero_step_always_accepts() {
        let mut t = FnTarget(|p: &[f64]| -p[0]);
        let mut rng = rng::stream(1, "t");
        let mut st = ChainState { params: vec![2.0], log_post: -2.0, summary: () };
        for sweep in [Sweep::Componentwise, Sweep::Joint] {
            for _ in 0..100 {
                assert_eq!(mh_step(&mut st, &mut t, &[0.0], sweep, &mut rng), vec![true]);
            }
        }
    }

    #[test]
    fn nan_target_is_rejected() {
        let mut t = FnTarget(|_: &[f64]| f64::NAN);
        let mut rng = rng::stream(2, "t");
        let mut st = ChainState { params: vec![1.0, 1.0], log_post: 0.0, summary: () };
        assert_eq!(mh_step(&mut st, &mut t, &[0.5, 0.5], Sweep::Componentwise, &mut rng), vec![false, false]);
        assert_eq!(st.params, vec![1.0, 1.0]);
    }

    #[test]
    fn config_validation() {
        let bad = ChainConfig { iterations: 100, burn_in: 50, retained: 60, ..Default::default() };
        assert!(bad.validate().is_err());
        assert!(ChainConfig::default().validate().is_ok());
        let mut t = FnTarget(|p: &[f64]| log_prior(p));
        assert!(run_chain(&mut t, vec!["a".into()], &[1.0], &bad).is_err());
    }

    #[test]
    fn same_seed_same_samples() {
        let cfg = ChainConfig { iterations: 400, burn_in: 100, retained: 300, seed: 9, ..Default::default() };
        let run = || {
            let mut t = FnTarget(|p: &[f64]| log_prior(p) - (p[0] - 2.0).powi(2));
            run_chain(&mut t, vec!["a".into(), "b".into()], &[1.0, 1.0], &cfg).unwrap().samples
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn steps_frozen_after_burn_in() {
        // With no burn-in there is nothing to adapt.
        let cfg = ChainConfig { iterations: 300, burn_in: 0, retained: 300, ..Default::default() };
        let mut t = FnTarget(|p: &[f64]| log_prior(p));
        let out = run_chain(&mut t, vec!["a".into()], &[1.0], &cfg).unwrap();
        assert_eq!(out.samples.steps, vec![cfg.initial_step]);
        assert!(out.samples.samples.iter().flatten().all(|&v| v > 0.0));
    }

    fn prior_quantile_check(sweep: Sweep) {
        let cfg = ChainConfig {
            iterations: 101_000,
            burn_in: 1000,
            retained: 100_000,
            initial_step: 1.0,
            sweep,
            seed: 3,
            ..Default::default()
        };
        let mut t = FnTarget(|p: &[f64]| log_prior(p));
        let out = run_chain(&mut t, vec!["a".into()], &[1.0], &cfg).unwrap();
        let mut v: Vec<f64> = out.samples.samples.iter().map(|r| r[0]).collect();
        v.sort_by(f64::total_cmp);
        for p in [0.1, 0.25, 0.5, 0.75, 0.9] {
            let q = crate::stats::quantile_sorted(&v, p);
            assert!((prior_cdf(q) - p).abs() < 0.02, "p={p}: F(q)={}", prior_cdf(q));
        }
    }

    #[test]
    fn prior_only_chain_matches_inverse_cdf() {
        prior_quantile_check(Sweep::Componentwise);
    }

    #[test]
    fn detailed_balance_on_two_level_target() {
        // density 3 on [1,2), 1 on [2,4): P(lambda < 2) = 3/5
        let mut t = FnTarget(|p: &[f64]| match p[0] {
            x if (1.0..2.0).contains(&x) => 3f64.ln(),
            x if (2.0..4.0).contains(&x) => 0.0,
            _ => f64::NEG_INFINITY,
        });
        let cfg = ChainConfig {
            iterations: 200_000,
            burn_in: 0,
            retained: 200_000,
            initial_step: 0.5,
            seed: 5,
            ..Default::default()
        };
        let out = run_chain(&mut t, vec!["a".into()], &[1.5], &cfg).unwrap();
        let frac = out.samples.samples.iter().filter(|r| r[0] < 2.0).count() as f64 / 200_000.0;
        assert!((frac - 0.6).abs() < 0.02 * 0.6, "{frac}");
    }

    #[test]
    fn up_and_down_moves_balance_for_log_symmetric_target() {
        // target symmetric in log-space about 0 (with the proposal's Jacobian)
        let mut t = FnTarget(|p: &[f64]| -0.5 * p[0].ln().powi(2) - p[0].ln());
        let mut rng = rng::stream(7, "t");
        let mut st = ChainState { params: vec![1.0], log_post: 0.0, summary: () };
        let (mut up, mut down) = (0usize, 0usize);
        for _ in 0..100_000 {
            let before = st.params[0];
            mh_step(&mut st, &mut t, &[0.8], Sweep::Joint, &mut rng);
            if st.params[0] > before {
                up += 1;
            } else if st.params[0] < before {
                down += 1;
            }
        }
        let rel = (up as f64 - down as f64).abs() / (up + down) as f64;
        assert!(rel < 0.02, "up {up} down {down}");
    }
}
