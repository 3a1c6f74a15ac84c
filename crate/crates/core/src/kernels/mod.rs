//! Stationary correlation families on the reduced input space.
//!
//! Every family is a function of the anisotropic scaled distance
//! `d = sqrt(Σ_j (ℓ_j - ℓ'_j)² / θ_j²)`. The nugget enters on the
//! correlation scale, so a [`KernelSpec`] fully determines `R = C + τ²I`.

pub mod special;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{check_dim, Error, Result};

/// Relative tolerance used for confluent hypergeometric quadrature.
pub const CH_REL_TOL: f64 = 1e-10;

/// A set of points stored row-major, one reduced input `(s, b)` per row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Inputs {
    dim: usize,
    data: Vec<f64>,
}

impl Inputs {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("input dimension must be positive".into()));
        }
        if data.len() % dim != 0 {
            return Err(Error::Data(format!(
                "input buffer of length {} is not a multiple of dimension {dim}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "non-finite input at row {}, column {}",
                pos / dim,
                pos % dim
            )));
        }
        Ok(Self { dim, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let dim = rows
            .first()
            .map(|r| r.as_ref().len())
            .ok_or_else(|| Error::Data("empty input set".into()))?;
        let mut data = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            check_dim("input row", dim, row.as_ref().len())?;
            data.extend_from_slice(row.as_ref());
        }
        Self::new(dim, data)
    }

    /// Concatenates active variables and geometry into one reduced input per row.
    pub fn from_parts(active: &[Vec<f64>], geometry: &[Vec<f64>]) -> Result<Self> {
        check_dim("geometry rows", active.len(), geometry.len())?;
        let rows: Vec<Vec<f64>> = active
            .iter()
            .zip(geometry)
            .map(|(s, b)| s.iter().chain(b).copied().collect())
            .collect();
        Self::from_rows(&rows)
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn select(&self, idx: &[usize]) -> Inputs {
        let mut data = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Inputs { dim: self.dim, data }
    }
}

/// Scaled distance between two inputs under per-coordinate ranges.
pub fn scaled_distance(a: &[f64], b: &[f64], ranges: &[f64]) -> Result<f64> {
    check_dim("scaled_distance second input", a.len(), b.len())?;
    check_dim("scaled_distance ranges", a.len(), ranges.len())?;
    if let Some(r) = ranges.iter().find(|r| !(**r > 0.0) || !r.is_finite()) {
        return Err(Error::InvalidParameter(format!("range must be positive and finite, got {r}")));
    }
    Ok(scaled_distance_sq_inv(a, b, &inverse(ranges)).sqrt())
}

fn inverse(ranges: &[f64]) -> Vec<f64> {
    ranges.iter().map(|r| 1.0 / r).collect()
}

#[inline]
pub(crate) fn scaled_distance_sq_inv(a: &[f64], b: &[f64], inv_ranges: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .zip(inv_ranges)
        .map(|((x, y), w)| {
            let t = (x - y) * w;
            t * t
        })
        .sum()
}

/// Matérn correlation with smoothness `nu`. Half-integer orders up to 5/2
/// use closed forms; other orders go through the Bessel function.
pub fn matern(d: f64, nu: f64) -> f64 {
    if nu == 0.5 {
        (-d).exp()
    } else if nu == 1.5 {
        let x = 3f64.sqrt() * d;
        (1.0 + x) * (-x).exp()
    } else if nu == 2.5 {
        let x = 5f64.sqrt() * d;
        (1.0 + x + x * x / 3.0) * (-x).exp()
    } else {
        matern_bessel(d, nu)
    }
}

/// Matérn correlation evaluated directly from `K_ν`, for any `nu > 0`.
pub fn matern_bessel(d: f64, nu: f64) -> f64 {
    if d == 0.0 {
        return 1.0;
    }
    let x = (2.0 * nu).sqrt() * d;
    let k = special::bessel_k(nu, x);
    if k == 0.0 {
        return 0.0;
    }
    ((1.0 - nu) * std::f64::consts::LN_2 - ln_gamma(nu) + nu * x.ln() + k.ln()).exp()
}

/// Power-exponential correlation `exp(-d^α)` for `0 < α <= 2`.
pub fn power_exp(d: f64, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha <= 2.0) {
        return Err(Error::InvalidParameter(format!(
            "power-exponential exponent must lie in (0, 2], got {alpha}"
        )));
    }
    Ok((-d.powf(alpha)).exp())
}

/// Confluent hypergeometric correlation `Γ(ν+α)/Γ(ν) U(α, 1-ν, d²)`.
pub fn confluent_hg(d: f64, alpha: f64, nu: f64) -> f64 {
    if d == 0.0 {
        return 1.0;
    }
    special::scaled_confluent_u(alpha, nu, d * d, CH_REL_TOL)
}

/// Correlation family and its shape parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum Family {
    Matern { nu: f64 },
    PowerExponential { alpha: f64 },
    ConfluentHypergeometric { alpha: f64, nu: f64 },
}

impl Family {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        match *self {
            Family::Matern { nu } if !(nu > 0.0 && nu.is_finite()) => {
                bad(format!("Matérn smoothness must be positive, got {nu}"))
            }
            Family::PowerExponential { alpha } if !(alpha > 0.0 && alpha <= 2.0) => {
                bad(format!("power-exponential exponent must lie in (0, 2], got {alpha}"))
            }
            Family::ConfluentHypergeometric { alpha, nu }
                if !(alpha > 0.0 && nu > 0.0 && alpha.is_finite() && nu.is_finite()) =>
            {
                bad(format!("confluent hypergeometric needs alpha, nu > 0, got ({alpha}, {nu})"))
            }
            _ => Ok(()),
        }
    }

    /// Correlation at scaled distance `d`.
    #[inline]
    pub fn at(&self, d: f64) -> f64 {
        match *self {
            Family::Matern { nu } => matern(d, nu),
            Family::PowerExponential { alpha } => (-d.powf(alpha)).exp(),
            Family::ConfluentHypergeometric { alpha, nu } => confluent_hg(d, alpha, nu),
        }
    }
}

impl Default for Family {
    fn default() -> Self {
        Family::Matern { nu: 2.5 }
    }
}

/// Correlation family, ranges `θ` and nugget `τ²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawKernelSpec", into = "RawKernelSpec")]
pub struct KernelSpec {
    pub family: Family,
    pub ranges: Vec<f64>,
    pub nugget: f64,
}

impl KernelSpec {
    pub fn new(family: Family, ranges: Vec<f64>, nugget: f64) -> Result<Self> {
        let spec = Self { family, ranges, nugget };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        self.family.validate()?;
        if self.ranges.is_empty() {
            return Err(Error::InvalidParameter("kernel needs at least one range".into()));
        }
        if let Some(r) = self.ranges.iter().find(|r| !(**r > 0.0 && r.is_finite())) {
            return Err(Error::InvalidParameter(format!("range must be positive and finite, got {r}")));
        }
        if !(self.nugget >= 0.0 && self.nugget.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "nugget must be nonnegative, got {}",
                self.nugget
            )));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.ranges.len()
    }

    /// A callable correlation with precomputed inverse ranges.
    pub fn correlation(&self) -> Correlation {
        Correlation {
            family: self.family,
            inv_ranges: inverse(&self.ranges),
        }
    }
}

/// Correlation function without nugget, ready for repeated evaluation.
#[derive(Debug, Clone)]
pub struct Correlation {
    family: Family,
    inv_ranges: Vec<f64>,
}

impl Correlation {
    #[inline]
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        self.family.at(scaled_distance_sq_inv(a, b, &self.inv_ranges).sqrt())
    }

    pub fn dim(&self) -> usize {
        self.inv_ranges.len()
    }
}

/// Dense matrix `R_ij = c(ℓ_i, ℓ_j) + τ² 1{i=j}`.
pub fn corr_matrix(inputs: &Inputs, spec: &KernelSpec) -> Result<DMatrix<f64>> {
    spec.validate()?;
    check_dim("corr_matrix ranges", inputs.dim(), spec.dim())?;
    let n = inputs.len();
    if n == 0 {
        return Err(Error::Data("corr_matrix needs at least one input".into()));
    }
    let corr = spec.correlation();
    let mut r = DMatrix::zeros(n, n);
    let mut duplicates = 0usize;
    for j in 0..n {
        r[(j, j)] = 1.0 + spec.nugget;
        for i in (j + 1)..n {
            let v = corr.eval(inputs.row(i), inputs.row(j));
            if inputs.row(i) == inputs.row(j) {
                duplicates += 1;
            }
            r[(i, j)] = v;
            r[(j, i)] = v;
        }
    }
    if duplicates > 0 && spec.nugget == 0.0 {
        log::warn!("correlation matrix is singular: {duplicates} coincident input pair(s) with zero nugget");
    }
    Ok(r)
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum FamilyName {
    Matern,
    PowerExponential,
    ConfluentHypergeometric,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawKernelSpec {
    family: FamilyName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    nu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    alpha: Option<f64>,
    ranges: Vec<f64>,
    #[serde(default)]
    nugget: f64,
}

impl TryFrom<RawKernelSpec> for KernelSpec {
    type Error = Error;

    fn try_from(raw: RawKernelSpec) -> Result<Self> {
        let missing = |key: &str| Error::Config(format!("kernel family requires `{key}`"));
        let family = match raw.family {
            FamilyName::Matern => Family::Matern { nu: raw.nu.unwrap_or(2.5) },
            FamilyName::PowerExponential => Family::PowerExponential {
                alpha: raw.alpha.ok_or_else(|| missing("alpha"))?,
            },
            FamilyName::ConfluentHypergeometric => Family::ConfluentHypergeometric {
                alpha: raw.alpha.ok_or_else(|| missing("alpha"))?,
                nu: raw.nu.ok_or_else(|| missing("nu"))?,
            },
        };
        KernelSpec::new(family, raw.ranges, raw.nugget)
    }
}

impl From<KernelSpec> for RawKernelSpec {
    fn from(spec: KernelSpec) -> Self {
        let (family, nu, alpha) = match spec.family {
            Family::Matern { nu } => (FamilyName::Matern, Some(nu), None),
            Family::PowerExponential { alpha } => (FamilyName::PowerExponential, None, Some(alpha)),
            Family::ConfluentHypergeometric { alpha, nu } => {
                (FamilyName::ConfluentHypergeometric, Some(nu), Some(alpha))
            }
        };
        RawKernelSpec {
            family,
            nu,
            alpha,
            ranges: spec.ranges,
            nugget: spec.nugget,
        }
    }
}
