//! Full-covariance GP reference: integrated posterior and universal kriging
//! with a dense Cholesky of `R`. Used as an oracle and for small problems.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::{params_from_spec, PredictiveT, Trend};
use crate::error::{check_dim, Error, Result};
use crate::inference::log_prior;
use crate::kernels::{corr_matrix, Inputs, KernelSpec};

pub struct DenseGp {
    inputs: Inputs,
    trend: Trend,
    h: DMatrix<f64>,
    z: DMatrix<f64>,
}

/// Dense model state at fixed hyperparameters.
pub struct DenseFit<'a> {
    gp: &'a DenseGp,
    spec: KernelSpec,
    chol: Cholesky<f64, Dyn>,
    beta: DMatrix<f64>,
    hrh_inv: DMatrix<f64>,
    sigma: DMatrix<f64>,
    log_posterior: f64,
}

fn log_det(c: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * c.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

impl DenseGp {
    pub fn new(inputs: Inputs, trend: Trend, outputs: DMatrix<f64>) -> Result<Self> {
        check_dim("dense outputs", inputs.len(), outputs.nrows())?;
        let h = trend.design(&inputs)?;
        Ok(Self { inputs, trend, h, z: outputs })
    }

    pub fn fit(&self, spec: &KernelSpec) -> Result<DenseFit<'_>> {
        let n = self.inputs.len();
        let (p, q) = (self.h.ncols(), self.z.ncols());
        let chol = corr_matrix(&self.inputs, spec)?
            .cholesky()
            .ok_or_else(|| Error::Numeric("dense correlation matrix is not positive definite".into()))?;
        let rh = chol.solve(&self.h);
        let rz = chol.solve(&self.z);
        let hrh = self.h.transpose() * &rh;
        let hc = hrh
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Numeric("H^T R^{-1} H is not positive definite".into()))?;
        let beta = hc.solve(&(self.h.transpose() * &rz));
        let resid = &self.z - &self.h * &beta;
        let s = resid.transpose() * chol.solve(&resid);
        let s = (&s + s.transpose()) * 0.5;
        let sc = s
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Numeric("residual quadratic form is not positive definite".into()))?;
        let lp = log_prior(&params_from_spec(spec))
            - 0.5 * q as f64 * (log_det(&chol) + log_det(&hc))
            - 0.5 * (n - p) as f64 * log_det(&sc);
        Ok(DenseFit {
            gp: self,
            spec: spec.clone(),
            hrh_inv: hc.inverse(),
            chol,
            beta,
            sigma: s / (n - p) as f64,
            log_posterior: lp,
        })
    }
}

impl DenseFit<'_> {
    pub fn log_posterior(&self) -> f64 {
        self.log_posterior
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    /// Universal kriging with every training run as a neighbor.
    pub fn predict(&self, x0: &[f64]) -> Result<PredictiveT> {
        let gp = self.gp;
        check_dim("prediction input", gp.inputs.dim(), x0.len())?;
        let corr = self.spec.correlation();
        let r0 = DVector::from_iterator(gp.inputs.len(), gp.inputs.rows().map(|r| corr.eval(x0, r)));
        let w = self.chol.solve(&r0);
        let h0 = DVector::from_vec(gp.trend.basis(x0));
        let location = self.beta.transpose() * &h0 + (&gp.z - &gp.h * &self.beta).transpose() * &w;
        let u = &h0 - gp.h.transpose() * &w;
        let rhat = 1.0 + self.spec.nugget - r0.dot(&w) + (u.transpose() * &self.hrh_inv * &u)[(0, 0)];
        Ok(PredictiveT {
            location,
            scale: &self.sigma * rhat.max(0.0),
            dof: gp.inputs.len() - gp.h.ncols(),
        })
    }
}
