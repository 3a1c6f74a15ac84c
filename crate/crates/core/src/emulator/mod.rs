//! Independent and separable NNGP emulators for FPC scores: integrated log
//! posteriors over `(theta, tau2)` and Student-t predictive distributions.
//!
//! Parameters are laid out as `[theta_1, .., theta_d, tau2]` everywhere.

pub mod dense;
mod sounding;

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use sounding::{emulate_sounding, score_draws, BandPrediction, EmulatorGroup, OutputSlot, SoundingConfig};

use crate::error::{check_dim, Error, Result};
use crate::inference::log_prior;
use crate::kernels::{Family, Inputs, KernelSpec};
use crate::nngp::{marginal_quantities, predict_neighbors_inv, MarginalQuantities, NngpStructure, SparseFactors};

/// Fixed basis `h(l)` of the GP mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Trend {
    #[default]
    Constant,
    /// Intercept plus the first `active` input coordinates.
    Linear { active: usize },
}

impl Trend {
    pub fn len(&self) -> usize {
        match self {
            Trend::Constant => 1,
            Trend::Linear { active } => 1 + active,
        }
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn basis(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Trend::Constant => vec![1.0],
            Trend::Linear { active } => std::iter::once(1.0).chain(x[..*active].iter().copied()).collect(),
        }
    }

    pub fn design(&self, inputs: &Inputs) -> Result<DMatrix<f64>> {
        if let Trend::Linear { active } = self {
            if *active > inputs.dim() {
                return Err(Error::Config(format!("linear trend uses {active} coordinates, inputs have {}", inputs.dim())));
            }
        }
        let p = self.len();
        Ok(DMatrix::from_fn(inputs.len(), p, |i, j| self.basis(inputs.row(i))[j]))
    }
}

/// Training inputs, trend design and outputs, all in NNGP order.
#[derive(Debug, Clone)]
pub struct TrainingData {
    structure: Arc<NngpStructure>,
    trend: Trend,
    h: DMatrix<f64>,
    z: DMatrix<f64>,
}

impl TrainingData {
    /// `outputs` rows follow the original (unordered) input order.
    pub fn new(structure: Arc<NngpStructure>, trend: Trend, outputs: &DMatrix<f64>) -> Result<Self> {
        let n = structure.len();
        check_dim("output rows", n, outputs.nrows())?;
        let h = trend.design(structure.inputs())?;
        let (p, q) = (h.ncols(), outputs.ncols());
        if q == 0 {
            return Err(Error::Data("no output columns".into()));
        }
        if n < p + q || n <= p {
            return Err(Error::Data(format!("{n} runs cannot support {p} trend terms and {q} outputs")));
        }
        if outputs.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("training outputs contain non-finite values".into()));
        }
        let z = structure.reorder_rows(outputs)?;
        Ok(Self { structure, trend, h, z })
    }

    pub fn structure(&self) -> &NngpStructure {
        &self.structure
    }

    pub fn trend(&self) -> Trend {
        self.trend
    }

    pub fn len(&self) -> usize {
        self.z.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.z.nrows() == 0
    }

    pub fn n_outputs(&self) -> usize {
        self.z.ncols()
    }

    pub fn input_dim(&self) -> usize {
        self.structure.inputs().dim()
    }

    pub fn dof(&self) -> usize {
        self.len() - self.h.ncols()
    }

    /// Outputs in NNGP order.
    pub fn outputs(&self) -> &DMatrix<f64> {
        &self.z
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.h
    }

    /// Single output column as its own data set (same graph).
    pub fn column(&self, j: usize) -> TrainingData {
        TrainingData {
            structure: Arc::clone(&self.structure),
            trend: self.trend,
            h: self.h.clone(),
            z: self.z.columns(j, 1).into_owned(),
        }
    }
}

/// Splits `[theta.., tau2]` into a kernel spec.
pub fn spec_from_params(family: Family, params: &[f64]) -> Result<KernelSpec> {
    let (nugget, ranges) = params
        .split_last()
        .ok_or_else(|| Error::InvalidParameter("empty parameter vector".into()))?;
    KernelSpec::new(family, ranges.to_vec(), *nugget)
}

pub fn params_from_spec(spec: &KernelSpec) -> Vec<f64> {
    spec.ranges.iter().copied().chain(std::iter::once(spec.nugget)).collect()
}

/// GLS summaries at fixed `(theta, tau2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpFit {
    pub log_det_r: f64,
    pub log_det_hrh: f64,
    /// `log|Z^T G Z|`.
    pub log_det_s: f64,
    /// `p x q`.
    pub beta: DMatrix<f64>,
    /// `Z^T G Z / (n - p)`, `q x q`.
    pub sigma: DMatrix<f64>,
    /// `(H^T R^{-1} H)^{-1}`.
    pub hrh_inv: DMatrix<f64>,
    pub dof: usize,
}

/// Relative size below which `Z^T G Z` is treated as singular.
const RESIDUAL_REL_TOL: f64 = 1e-12;

impl GpFit {
    pub fn from_quantities(mq: &MarginalQuantities, n: usize) -> Result<Self> {
        let p = mq.hrh.nrows();
        let chol = mq
            .hrh
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Numeric("H^T R^{-1} H is not positive definite".into()))?;
        let log_det_hrh = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let hrh_inv = chol.inverse();
        let beta = chol.solve(&mq.hrz);
        let mut s = &mq.zrz - mq.hrz.transpose() * &beta;
        s = (&s + s.transpose()) * 0.5;
        for j in 0..s.nrows() {
            if !(s[(j, j)] > RESIDUAL_REL_TOL * mq.zrz[(j, j)].abs()) {
                return Err(Error::Numeric(format!(
                    "residual quadratic form of output {j} is not positive ({:e})",
                    s[(j, j)]
                )));
            }
        }
        let sc = s
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Numeric("Z^T G Z is not positive definite".into()))?;
        let log_det_s = 2.0 * sc.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let dof = n - p;
        Ok(Self { log_det_r: mq.log_det_r, log_det_hrh, log_det_s, beta, sigma: s / dof as f64, hrh_inv, dof })
    }

    /// `log pi(params) - q/2 log|R| - q/2 log|H^T R^{-1} H| - (n-p)/2 log|Z^T G Z|`,
    /// dropping constants that do not depend on the parameters.
    pub fn log_posterior(&self, params: &[f64]) -> f64 {
        let q = self.sigma.nrows() as f64;
        log_prior(params) - 0.5 * q * (self.log_det_r + self.log_det_hrh) - 0.5 * self.dof as f64 * self.log_det_s
    }
}

/// Fit summaries at `spec`, reusing `factors` when supplied.
pub fn fit(data: &TrainingData, spec: &KernelSpec, factors: Option<&SparseFactors>) -> Result<GpFit> {
    let own;
    let f = match factors {
        Some(f) => f,
        None => {
            own = data.structure.factors(spec)?;
            &own
        }
    };
    let mq = marginal_quantities(&data.structure, f, spec.nugget, &data.h, &data.z)?;
    GpFit::from_quantities(&mq, data.len())
}

/// Integrated log posterior of a single score vector.
pub fn log_posterior_ind(data: &TrainingData, spec: &KernelSpec) -> Result<f64> {
    check_dim("independent emulator outputs", 1, data.n_outputs())?;
    Ok(fit(data, spec, None)?.log_posterior(&params_from_spec(spec)))
}

/// Integrated log posterior of the separable model over all output columns.
pub fn log_posterior_sep(data: &TrainingData, spec: &KernelSpec) -> Result<f64> {
    Ok(fit(data, spec, None)?.log_posterior(&params_from_spec(spec)))
}

/// Posterior target for MCMC that keeps the Vecchia factors when only the
/// nugget changes between evaluations.
pub struct PosteriorTarget {
    data: Arc<TrainingData>,
    family: Family,
    cache: Option<(Vec<f64>, SparseFactors)>,
}

impl PosteriorTarget {
    pub fn new(data: Arc<TrainingData>, family: Family) -> Self {
        Self { data, family, cache: None }
    }

    pub fn data(&self) -> &TrainingData {
        &self.data
    }

    pub fn dim(&self) -> usize {
        self.data.input_dim() + 1
    }

    pub fn evaluate(&mut self, params: &[f64]) -> Result<(f64, GpFit)> {
        check_dim("posterior parameters", self.dim(), params.len())?;
        let spec = spec_from_params(self.family, params)?;
        let hit = matches!(&self.cache, Some((r, _)) if r.as_slice() == spec.ranges.as_slice());
        if !hit {
            self.cache = Some((spec.ranges.clone(), self.data.structure.factors(&spec)?));
        }
        let factors = &self.cache.as_ref().expect("cache filled").1;
        let g = fit(&self.data, &spec, Some(factors))?;
        Ok((g.log_posterior(params), g))
    }
}

impl crate::inference::Target for PosteriorTarget {
    type Summary = GpFit;

    fn evaluate(&mut self, params: &[f64]) -> Result<(f64, GpFit)> {
        PosteriorTarget::evaluate(self, params)
    }
}

/// Student-t predictive: `location`, `scale` (`q x q`) and degrees of freedom.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveT {
    pub location: DVector<f64>,
    pub scale: DMatrix<f64>,
    pub dof: usize,
}

impl PredictiveT {
    pub fn dim(&self) -> usize {
        self.location.len()
    }

    /// Marginal standard deviation of component `j` (infinite when dof <= 2).
    pub fn marginal_sd(&self, j: usize) -> f64 {
        let nu = self.dof as f64;
        if nu > 2.0 {
            (self.scale[(j, j)] * nu / (nu - 2.0)).sqrt()
        } else {
            f64::INFINITY
        }
    }
}

/// Emulator with hyperparameters fixed.
#[derive(Debug, Clone)]
pub struct FittedEmulator {
    data: Arc<TrainingData>,
    spec: KernelSpec,
    fit: GpFit,
    neighbors: usize,
}

impl FittedEmulator {
    /// `neighbors` is the size of `N(l0)` used at prediction time.
    pub fn new(data: Arc<TrainingData>, spec: KernelSpec, neighbors: usize) -> Result<Self> {
        let g = fit(&data, &spec, None)?;
        Self::from_fit(data, spec, g, neighbors)
    }

    pub fn from_fit(data: Arc<TrainingData>, spec: KernelSpec, fit: GpFit, neighbors: usize) -> Result<Self> {
        check_dim("kernel ranges", data.input_dim(), spec.dim())?;
        check_dim("fit outputs", data.n_outputs(), fit.sigma.nrows())?;
        if neighbors == 0 {
            return Err(Error::InvalidParameter("prediction neighbor count must be at least 1".into()));
        }
        if neighbors > data.len() {
            log::warn!("prediction neighbor count {neighbors} exceeds reference size {}; clamping", data.len());
        }
        let neighbors = neighbors.min(data.len());
        Ok(Self { data, spec, fit, neighbors })
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn fit(&self) -> &GpFit {
        &self.fit
    }

    /// Predictive location and the scalar `r_hat(l0)`.
    pub fn kriging(&self, x0: &[f64]) -> Result<(DVector<f64>, f64)> {
        check_dim("prediction input", self.data.input_dim(), x0.len())?;
        let inputs = self.data.structure.inputs();
        let corr = self.spec.correlation();
        let inv: Vec<f64> = self.spec.ranges.iter().map(|r| 1.0 / r).collect();
        let nb = predict_neighbors_inv(inputs, x0, self.neighbors, &inv);
        let m = nb.len();
        let tau2 = self.spec.nugget;
        let mut block = DMatrix::from_element(m, m, 1.0 + tau2);
        for a in 0..m {
            for b in 0..a {
                let c = corr.eval(inputs.row(nb[a]), inputs.row(nb[b]));
                block[(a, b)] = c;
                block[(b, a)] = c;
            }
        }
        let r0 = DVector::from_iterator(m, nb.iter().map(|&j| corr.eval(x0, inputs.row(j))));
        let chol = match block.clone().cholesky() {
            Some(c) => c,
            None => {
                log::warn!("prediction neighbor block singular; adding jitter {:e}", crate::nngp::JITTER);
                for k in 0..m {
                    block[(k, k)] += crate::nngp::JITTER;
                }
                block
                    .cholesky()
                    .ok_or_else(|| Error::Numeric("prediction neighbor block is singular after jitter".into()))?
            }
        };
        let w = chol.solve(&r0);
        let h0 = DVector::from_vec(self.data.trend.basis(x0));
        let hn = self.data.h.select_rows(nb.iter());
        let zn = self.data.z.select_rows(nb.iter());
        let resid = zn - &hn * &self.fit.beta;
        let location = self.fit.beta.transpose() * &h0 + resid.transpose() * &w;
        let u = &h0 - hn.transpose() * &w;
        let rhat = 1.0 + tau2 - r0.dot(&w) + (u.transpose() * &self.fit.hrh_inv * &u)[(0, 0)];
        Ok((location, rhat.max(0.0)))
    }

    pub fn predict(&self, x0: &[f64]) -> Result<PredictiveT> {
        let (location, rhat) = self.kriging(x0)?;
        Ok(PredictiveT { location, scale: &self.fit.sigma * rhat, dof: self.fit.dof })
    }
}

/// Scalar Student-t predictive of a single-output emulator.
pub fn predict_ind(model: &FittedEmulator, x0: &[f64]) -> Result<PredictiveT> {
    check_dim("independent emulator outputs", 1, model.fit.sigma.nrows())?;
    model.predict(x0)
}

/// Multivariate Student-t predictive of a separable emulator.
pub fn predict_sep(model: &FittedEmulator, x0: &[f64]) -> Result<PredictiveT> {
    model.predict(x0)
}

/// Largest discrepancies between the separable predictive and independent
/// per-output predictives sharing its kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SepIndReport {
    pub max_mean_delta: f64,
    pub max_scale_delta: f64,
}

pub fn sep_ind_check(data: Arc<TrainingData>, spec: &KernelSpec, points: &[Vec<f64>], neighbors: usize) -> Result<SepIndReport> {
    let sep = FittedEmulator::new(Arc::clone(&data), spec.clone(), neighbors)?;
    let ind: Vec<FittedEmulator> = (0..data.n_outputs())
        .map(|j| FittedEmulator::new(Arc::new(data.column(j)), spec.clone(), neighbors))
        .collect::<Result<_>>()?;
    let mut report = SepIndReport { max_mean_delta: 0.0, max_scale_delta: 0.0 };
    for x0 in points {
        let s = predict_sep(&sep, x0)?;
        for (j, m) in ind.iter().enumerate() {
            let i = predict_ind(m, x0)?;
            report.max_mean_delta = report.max_mean_delta.max((s.location[j] - i.location[0]).abs());
            report.max_scale_delta = report.max_scale_delta.max((s.scale[(j, j)] - i.scale[(0, 0)]).abs());
        }
    }
    Ok(report)
}
