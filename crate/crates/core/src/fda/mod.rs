//! Functional representation of spectra: per-curve B-spline fits, a
//! penalized mean function, and functional PCA in coefficient space.

mod banded;
pub mod bspline;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use bspline::BSplineSystem;

use crate::error::{check_dim, Error, Result};
use banded::BandedSpd;

const PIVOT_REL_TOL: f64 = 1e-10;

/// Spectra for one band: `values` is `n × m` row-major with `NaN` marking
/// missing entries.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralCurveSet {
    pub band: String,
    pub wavelengths: Vec<f64>,
    values: Vec<f64>,
    pub log_transform: bool,
}

impl SpectralCurveSet {
    pub fn new(
        band: impl Into<String>,
        wavelengths: Vec<f64>,
        values: Vec<f64>,
        log_transform: bool,
    ) -> Result<Self> {
        let m = wavelengths.len();
        if m == 0 {
            return Err(Error::Data("spectral grid is empty".into()));
        }
        if let Some(w) = wavelengths.windows(2).position(|w| !(w[0] < w[1])) {
            return Err(Error::Data(format!(
                "wavelengths must be strictly increasing (index {})",
                w + 1
            )));
        }
        if values.len() % m != 0 {
            return Err(Error::Data(format!(
                "radiance buffer of length {} does not match {m} wavelengths",
                values.len()
            )));
        }
        if log_transform {
            if let Some(pos) = values.iter().position(|v| !v.is_nan() && !(*v > 0.0)) {
                return Err(Error::Data(format!(
                    "nonpositive radiance at curve {}, wavelength index {} cannot be log-transformed",
                    pos / m,
                    pos % m
                )));
            }
        }
        Ok(Self {
            band: band.into(),
            wavelengths,
            values,
            log_transform,
        })
    }

    pub fn n_curves(&self) -> usize {
        self.values.len() / self.wavelengths.len()
    }

    pub fn n_wavelengths(&self) -> usize {
        self.wavelengths.len()
    }

    /// Raw radiances of curve `i`.
    pub fn curve(&self, i: usize) -> &[f64] {
        let m = self.wavelengths.len();
        &self.values[i * m..(i + 1) * m]
    }

    /// Curve `i` on the modelling scale (log radiance when flagged).
    pub fn modelled(&self, i: usize) -> Vec<f64> {
        let raw = self.curve(i);
        if self.log_transform {
            raw.iter().map(|v| v.ln()).collect()
        } else {
            raw.to_vec()
        }
    }

    pub fn select(&self, idx: &[usize]) -> SpectralCurveSet {
        let mut values = Vec::with_capacity(idx.len() * self.wavelengths.len());
        for &i in idx {
            values.extend_from_slice(self.curve(i));
        }
        SpectralCurveSet {
            band: self.band.clone(),
            wavelengths: self.wavelengths.clone(),
            values,
            log_transform: self.log_transform,
        }
    }

    pub fn missing_fraction(&self) -> f64 {
        self.values.iter().filter(|v| v.is_nan()).count() as f64 / self.values.len().max(1) as f64
    }
}

/// Per-curve least-squares coefficients (`n × G`) and residual norms.
#[derive(Debug, Clone)]
pub struct CurveFit {
    pub coefs: DMatrix<f64>,
    pub residual_norms: Vec<f64>,
}

fn normal_equations(
    system: &BSplineSystem,
    wavelengths: &[f64],
    y: &[f64],
    band: &mut BandedSpd,
    rhs: &mut [f64],
) -> Result<()> {
    for (w, v) in wavelengths.iter().zip(y) {
        if v.is_nan() {
            continue;
        }
        let (first, vals) = system.nonzero(*w)?;
        band.add_outer(first, &vals, 1.0);
        for (j, b) in vals.iter().enumerate() {
            rhs[first + j] += b * v;
        }
    }
    Ok(())
}

fn fit_one(system: &BSplineSystem, wavelengths: &[f64], y: &[f64], curve: usize) -> Result<(Vec<f64>, f64)> {
    let g = system.n_basis();
    let mut band = BandedSpd::zeros(g, system.degree());
    let mut coefs = vec![0.0; g];
    normal_equations(system, wavelengths, y, &mut band, &mut coefs)?;
    let chol = band.cholesky(PIVOT_REL_TOL).map_err(|row| {
        Error::Data(format!(
            "curve {curve}: B-spline design is rank deficient (basis function {row} has too few observations)"
        ))
    })?;
    chol.solve_in_place(&mut coefs);
    let mut rss = 0.0;
    for (w, v) in wavelengths.iter().zip(y) {
        if !v.is_nan() {
            let r = v - system.eval_combination(&coefs, *w)?;
            rss += r * r;
        }
    }
    Ok((coefs, rss.sqrt()))
}

/// Least-squares B-spline fit of every curve over its observed wavelengths.
pub fn fit_curves(curves: &SpectralCurveSet, system: &BSplineSystem) -> Result<CurveFit> {
    let n = curves.n_curves();
    let g = system.n_basis();
    let fits: Vec<(Vec<f64>, f64)> = (0..n)
        .into_par_iter()
        .map(|i| fit_one(system, &curves.wavelengths, &curves.modelled(i), i))
        .collect::<Result<_>>()?;
    let mut coefs = DMatrix::zeros(n, g);
    let mut residual_norms = Vec::with_capacity(n);
    for (i, (c, r)) in fits.into_iter().enumerate() {
        for (j, v) in c.into_iter().enumerate() {
            coefs[(i, j)] = v;
        }
        residual_norms.push(r);
    }
    Ok(CurveFit {
        coefs,
        residual_norms,
    })
}

/// Coefficients of the cross-curve mean, minimizing
/// `n⁻¹ Σ_i Σ_j (y_ij - μ(ω_j))² + penalty · ∫ μ''²` over observed entries.
pub fn mean_function(curves: &SpectralCurveSet, system: &BSplineSystem, penalty: f64) -> Result<Vec<f64>> {
    let n = curves.n_curves();
    if n < 2 {
        return Err(Error::Data(format!("mean function needs at least 2 curves, got {n}")));
    }
    if !(penalty >= 0.0) {
        return Err(Error::InvalidParameter(format!("penalty must be nonnegative, got {penalty}")));
    }
    let g = system.n_basis();
    let p = system.degree();
    let mut band = BandedSpd::zeros(g, p);
    let mut rhs = vec![0.0; g];
    for i in 0..n {
        normal_equations(system, &curves.wavelengths, &curves.modelled(i), &mut band, &mut rhs)?;
    }
    let scale = 1.0 / n as f64;
    let mut scaled = BandedSpd::zeros(g, p);
    let rough = system.roughness();
    for i in 0..g {
        for j in i.saturating_sub(p)..=i {
            scaled.add(i, j, scale * band.get(i, j) + penalty * rough[(i, j)]);
        }
    }
    rhs.iter_mut().for_each(|v| *v *= scale);
    // the penalty can dominate the diagonal, so only positivity is required
    let chol = scaled.cholesky(0.0).map_err(|row| {
        Error::Numeric(format!("mean function: system is not positive definite at basis function {row}"))
    })?;
    chol.solve_in_place(&mut rhs);
    Ok(rhs)
}

/// Eigen-part of functional PCA: eigenvalues (descending) and
/// `J`-orthonormal coefficient vectors as columns.
#[derive(Debug, Clone)]
pub struct Fpca {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: DMatrix<f64>,
}

/// Solves `n⁻¹ AᵀA J d = λ d` through the symmetric form
/// `n⁻¹ LᵀAᵀA L u = λ u` with `J = L Lᵀ` and `d = L⁻ᵀ u`.
pub fn fpca(centered: &DMatrix<f64>, gram: &DMatrix<f64>) -> Result<Fpca> {
    let (n, g) = centered.shape();
    check_dim("fpca Gram matrix", g, gram.nrows())?;
    check_dim("fpca Gram matrix", g, gram.ncols())?;
    if n == 0 {
        return Err(Error::Data("fpca needs at least one curve".into()));
    }
    let chol = gram.clone().cholesky().ok_or_else(|| {
        let eig = gram.symmetric_eigenvalues();
        let max = eig.amax();
        let rank = eig.iter().filter(|v| **v > 1e-12 * max).count();
        Error::Numeric(format!("Gram matrix is numerically singular: rank {rank} of {g}"))
    })?;
    let l = chol.l();
    let al = centered * &l;
    let m = (al.transpose() * &al) / n as f64;
    let eig = m.symmetric_eigen();
    let mut order: Vec<usize> = (0..g).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let lt = l.transpose();
    let mut eigenvalues = Vec::with_capacity(g);
    let mut eigenvectors = DMatrix::zeros(g, g);
    for (col, &k) in order.iter().enumerate() {
        eigenvalues.push(eig.eigenvalues[k].max(0.0));
        let u = eig.eigenvectors.column(k).into_owned();
        let mut d = lt
            .solve_upper_triangular(&u)
            .ok_or_else(|| Error::Numeric("triangular solve failed in fpca".into()))?;
        fix_sign_first_nonzero(d.as_mut_slice());
        eigenvectors.set_column(col, &d);
    }
    Ok(Fpca {
        eigenvalues,
        eigenvectors,
    })
}

fn fix_sign_first_nonzero(v: &mut [f64]) {
    let max = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if let Some(first) = v.iter().find(|x| x.abs() > 1e-8 * max) {
        if *first < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

/// Smallest number of leading components whose cumulative share of the
/// total strictly exceeds `threshold`.
pub fn select_ncomp(eigenvalues: &[f64], threshold: f64) -> Result<usize> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::InvalidParameter(format!("threshold must lie in [0, 1], got {threshold}")));
    }
    let total: f64 = eigenvalues.iter().map(|v| v.max(0.0)).sum();
    if !(total > 0.0) {
        return Err(Error::Numeric("all eigenvalues are zero; no variance to explain".into()));
    }
    let mut cum = 0.0;
    for (k, v) in eigenvalues.iter().enumerate() {
        cum += v.max(0.0);
        // guard against rounding pushing an exact tie over the threshold
        if cum > threshold * total * (1.0 + 1e-12) {
            return Ok(k + 1);
        }
    }
    Ok(eigenvalues.len())
}

/// Settings for building a band's functional basis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FpcaConfig {
    pub n_basis: usize,
    pub degree: usize,
    pub mean_penalty: f64,
    pub threshold: f64,
}

impl Default for FpcaConfig {
    fn default() -> Self {
        Self {
            n_basis: 500,
            degree: 3,
            mean_penalty: 1e-8,
            threshold: 0.99,
        }
    }
}

/// Mean function and leading eigenfunctions for one band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionalBasis {
    pub band: String,
    pub system: BSplineSystem,
    pub log_transform: bool,
    pub mean_coefs: Vec<f64>,
    /// All eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
    /// Retained eigen-coefficients, one `G`-vector per component.
    pub components: Vec<Vec<f64>>,
    /// `J d_l` for each retained component, so that scores are dot products.
    score_weights: Vec<Vec<f64>>,
}

/// Output of [`FunctionalBasis::build`].
#[derive(Debug, Clone)]
pub struct BasisFit {
    pub basis: FunctionalBasis,
    /// `n × p` score matrix.
    pub scores: DMatrix<f64>,
    pub residual_norms: Vec<f64>,
}

impl FunctionalBasis {
    pub fn from_parts(
        band: impl Into<String>,
        system: BSplineSystem,
        log_transform: bool,
        mean_coefs: Vec<f64>,
        eigenvalues: Vec<f64>,
        components: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let g = system.n_basis();
        check_dim("mean coefficients", g, mean_coefs.len())?;
        for c in &components {
            check_dim("eigen-coefficients", g, c.len())?;
        }
        let gram = system.gram();
        let score_weights = components
            .iter()
            .map(|d| (&gram * DVector::from_column_slice(d)).as_slice().to_vec())
            .collect();
        Ok(Self {
            band: band.into(),
            system,
            log_transform,
            mean_coefs,
            eigenvalues,
            components,
            score_weights,
        })
    }

    /// Fits curves, the mean and FPCA, keeping enough components to pass
    /// `config.threshold`.
    pub fn build(curves: &SpectralCurveSet, config: &FpcaConfig) -> Result<BasisFit> {
        let lo = curves.wavelengths[0];
        let hi = *curves.wavelengths.last().unwrap();
        let system = BSplineSystem::equidistant(lo, hi, config.n_basis, config.degree)?;
        let fit = fit_curves(curves, &system)?;
        let mean = mean_function(curves, &system, config.mean_penalty)?;
        let mut centered = fit.coefs;
        for mut row in centered.row_iter_mut() {
            for (v, m) in row.iter_mut().zip(&mean) {
                *v -= m;
            }
        }
        let eig = fpca(&centered, &system.gram())?;
        let p = select_ncomp(&eig.eigenvalues, config.threshold)?;
        let components = (0..p).map(|l| eig.eigenvectors.column(l).as_slice().to_vec()).collect();
        let basis = Self::from_parts(
            curves.band.clone(),
            system,
            curves.log_transform,
            mean,
            eig.eigenvalues,
            components,
        )?;
        let scores = basis.scores_matrix(&centered);
        Ok(BasisFit {
            basis,
            scores,
            residual_norms: fit.residual_norms,
        })
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    /// Share of total variance carried by each eigenvalue.
    pub fn explained(&self) -> Vec<f64> {
        let total: f64 = self.eigenvalues.iter().sum();
        self.eigenvalues.iter().map(|v| v / total).collect()
    }

    pub fn cumulative_explained(&self) -> f64 {
        self.explained().iter().take(self.n_components()).sum()
    }

    /// Scores `z_l = aᵀ J d_l` of one centered coefficient vector.
    pub fn scores(&self, centered_coefs: &[f64]) -> Result<Vec<f64>> {
        check_dim("score coefficients", self.system.n_basis(), centered_coefs.len())?;
        Ok(self
            .score_weights
            .iter()
            .map(|w| w.iter().zip(centered_coefs).map(|(a, b)| a * b).sum())
            .collect())
    }

    pub fn scores_matrix(&self, centered: &DMatrix<f64>) -> DMatrix<f64> {
        let g = self.system.n_basis();
        let p = self.n_components();
        let w = DMatrix::from_fn(g, p, |i, l| self.score_weights[l][i]);
        centered * w
    }

    /// Centers raw coefficient rows by the mean coefficients.
    pub fn center(&self, coefs: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = coefs.clone();
        for mut row in out.row_iter_mut() {
            for (v, m) in row.iter_mut().zip(&self.mean_coefs) {
                *v -= m;
            }
        }
        out
    }

    /// Spline coefficients of `μ + Σ_l z_l η_l`.
    pub fn coefficients(&self, scores: &[f64]) -> Result<Vec<f64>> {
        check_dim("reconstruction scores", self.n_components(), scores.len())?;
        let mut c = self.mean_coefs.clone();
        for (d, z) in self.components.iter().zip(scores) {
            for (ci, di) in c.iter_mut().zip(d) {
                *ci += z * di;
            }
        }
        Ok(c)
    }

    /// `μ(ω) + Σ_l z_l η_l(ω)` on `grid`, on the modelling scale.
    pub fn reconstruct(&self, scores: &[f64], grid: &[f64]) -> Result<Vec<f64>> {
        let c = self.coefficients(scores)?;
        grid.iter().map(|w| self.system.eval_combination(&c, *w)).collect()
    }

    /// Evaluates eigenfunctions on `grid`: entry `[l][j]` is `η_l(grid[j])`.
    pub fn eigenfunctions(&self, grid: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.components
            .iter()
            .map(|d| grid.iter().map(|w| self.system.eval_combination(d, *w)).collect())
            .collect()
    }

    /// Maps a modelling-scale value back to radiance.
    pub fn to_radiance(&self, v: f64) -> f64 {
        if self.log_transform {
            v.exp()
        } else {
            v
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn grid(m: usize, lo: f64, hi: f64) -> Vec<f64> {
        (0..m).map(|j| lo + (hi - lo) * j as f64 / (m - 1) as f64).collect()
    }

    fn curves_from(f: impl Fn(usize, f64) -> f64, n: usize, w: &[f64]) -> SpectralCurveSet {
        let values = (0..n).flat_map(|i| w.iter().map(move |x| (i, *x))).map(|(i, x)| f(i, x)).collect();
        SpectralCurveSet::new("b", w.to_vec(), values, false).unwrap()
    }

    #[test]
    fn curve_set_validation() {
        assert!(SpectralCurveSet::new("b", vec![1.0, 1.0], vec![0.0, 0.0], false).is_err());
        assert!(SpectralCurveSet::new("b", vec![1.0, 2.0], vec![0.0; 3], false).is_err());
        assert!(SpectralCurveSet::new("b", vec![1.0, 2.0], vec![1.0, -1.0], true).is_err());
        let ok = SpectralCurveSet::new("b", vec![1.0, 2.0], vec![1.0, f64::NAN], true).unwrap();
        assert_eq!(ok.n_curves(), 1);
    }

    #[test]
    fn fit_reproduces_single_basis_function() {
        let sys = BSplineSystem::equidistant(0.0, 1.0, 12, 3).unwrap();
        let w = grid(400, 0.0, 1.0);
        let curves = curves_from(|_, x| sys.eval(x).unwrap()[0], 1, &w);
        let fit = fit_curves(&curves, &sys).unwrap();
        for g in 0..12 {
            let want = if g == 0 { 1.0 } else { 0.0 };
            assert!((fit.coefs[(0, g)] - want).abs() < 1e-10);
        }
    }

    #[test]
    fn fit_constant_curve() {
        let sys = BSplineSystem::equidistant(0.0, 1.0, 20, 3).unwrap();
        let w = grid(200, 0.0, 1.0);
        let curves = curves_from(|_, _| 2.5, 1, &w);
        let fit = fit_curves(&curves, &sys).unwrap();
        assert!(fit.residual_norms[0] < 1e-10);
        assert!(fit.coefs.iter().all(|c| (c - 2.5).abs() < 1e-10));
    }

    #[test]
    fn fit_with_missing_matches_complete_case() {
        let sys = BSplineSystem::equidistant(0.0, 1.0, 25, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let truth: Vec<f64> = (0..25).map(|_| rng.random::<f64>()).collect();
        let w = grid(600, 0.0, 1.0);
        let full: Vec<f64> = w.iter().map(|x| sys.eval_combination(&truth, *x).unwrap()).collect();
        let gappy: Vec<f64> = full
            .iter()
            .map(|v| if rng.random::<f64>() < 0.3 { f64::NAN } else { *v })
            .collect();
        let a = fit_curves(&SpectralCurveSet::new("b", w.clone(), full, false).unwrap(), &sys).unwrap();
        let b = fit_curves(&SpectralCurveSet::new("b", w, gappy, false).unwrap(), &sys).unwrap();
        assert!((&a.coefs - &b.coefs).amax() < 1e-8);
    }

    #[test]
    fn fit_rank_deficient_names_curve() {
        let sys = BSplineSystem::equidistant(0.0, 1.0, 20, 3).unwrap();
        let w = grid(200, 0.0, 1.0);
        let mut values: Vec<f64> = vec![1.0; 400];
        for v in values[200..300].iter_mut() {
            *v = f64::NAN;
        }
        let curves = SpectralCurveSet::new("b", w, values, false).unwrap();
        let err = fit_curves(&curves, &sys).unwrap_err().to_string();
        assert!(err.contains("curve 1"), "{err}");
    }

    #[test]
    fn mean_of_identical_curves() {
        let sys = BSplineSystem::equidistant(0.0, 1.0, 30, 3).unwrap();
        let w = grid(300, 0.0, 1.0);
        let f = |x: f64| (3.0 * x).sin() + x * x;
        let curves = curves_from(|_, x| f(x), 4, &w);
        let mean = mean_function(&curves, &sys, 1e-12).unwrap();
        let exact = mean_function(&curves, &sys, 0.0).unwrap();
        let single = fit_curves(&curves.select(&[0]), &sys).unwrap();
        for g in 0..30 {
            assert!((mean[g] - single.coefs[(0, g)]).abs() < 1e-8);
            assert!((exact[g] - single.coefs[(0, g)]).abs() < 1e-10);
        }
    }

    #[test]
    fn heavy_penalty_gives_linear_fit() {
        let sys = BSplineSystem::equidistant(0.0, 1.0, 30, 3).unwrap();
        let w = grid(300, 0.0, 1.0);
        let curves = curves_from(|i, x| (5.0 * x).sin() + i as f64 * 0.1, 3, &w);
        let mean = mean_function(&curves, &sys, 1e6).unwrap();
        // ordinary least-squares line through the pooled data
        let ys: Vec<f64> = (0..3).flat_map(|i| curves.modelled(i)).collect();
        let xs: Vec<f64> = (0..3).flat_map(|_| w.clone()).collect();
        let xm = xs.iter().sum::<f64>() / xs.len() as f64;
        let ym = ys.iter().sum::<f64>() / ys.len() as f64;
        let slope = xs.iter().zip(&ys).map(|(x, y)| (x - xm) * (y - ym)).sum::<f64>()
            / xs.iter().map(|x| (x - xm).powi(2)).sum::<f64>();
        for &x in &[0.0, 0.3, 0.8, 1.0] {
            let line = ym + slope * (x - xm);
            let got = sys.eval_combination(&mean, x).unwrap();
            assert!((got - line).abs() < 1e-4, "x={x}: {got} vs {line}");
        }
    }

    #[test]
    fn mean_of_opposite_curves_is_zero() {
        let sys = BSplineSystem::equidistant(0.0, 1.0, 20, 3).unwrap();
        let w = grid(200, 0.0, 1.0);
        let curves = curves_from(|i, x| if i == 0 { x.cos() } else { -x.cos() }, 2, &w);
        let mean = mean_function(&curves, &sys, 1e-8).unwrap();
        assert!(mean.iter().all(|c| c.abs() < 1e-10));
    }

    fn j_orthonormal(sys: &BSplineSystem, raw: &[Vec<f64>]) -> Vec<DVector<f64>> {
        let j = sys.gram();
        let mut out: Vec<DVector<f64>> = Vec::new();
        for r in raw {
            let mut v = DVector::from_column_slice(r);
            for u in &out {
                let proj = (v.transpose() * &j * u)[(0, 0)];
                v -= u * proj;
            }
            let norm = (v.transpose() * &j * &v)[(0, 0)].sqrt();
            out.push(v / norm);
        }
        out
    }

    #[test]
    fn fpca_recovers_planted_rank_two() {
        let sys = BSplineSystem::equidistant(0.0, 2.0, 15, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let raw: Vec<Vec<f64>> = (0..2).map(|_| (0..15).map(|_| rng.random::<f64>() - 0.5).collect()).collect();
        let d = j_orthonormal(&sys, &raw);
        // scores with exactly orthogonal, centered columns of known variance
        let n = 40;
        let (s1, s2) = (2.0, 0.7);
        let u1: Vec<f64> = (0..n).map(|i| if i % 2 == 0 { s1 } else { -s1 }).collect();
        let u2: Vec<f64> = (0..n).map(|i| if (i / 2) % 2 == 0 { s2 } else { -s2 }).collect();
        let a = DMatrix::from_fn(n, 15, |i, g| u1[i] * d[0][g] + u2[i] * d[1][g]);
        let eig = fpca(&a, &sys.gram()).unwrap();
        assert!((eig.eigenvalues[0] - s1 * s1).abs() < 1e-10);
        assert!((eig.eigenvalues[1] - s2 * s2).abs() < 1e-10);
        assert!(eig.eigenvalues[2..].iter().all(|v| v.abs() < 1e-10));
        let j = sys.gram();
        for l in 0..15 {
            for k in 0..15 {
                let ip = (eig.eigenvectors.column(l).transpose() * &j * eig.eigenvectors.column(k))[(0, 0)];
                let want = if l == k { 1.0 } else { 0.0 };
                assert!((ip - want).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn fpca_of_zero_matrix() {
        let sys = BSplineSystem::equidistant(0.0, 1.0, 8, 3).unwrap();
        let eig = fpca(&DMatrix::zeros(5, 8), &sys.gram()).unwrap();
        assert!(eig.eigenvalues.iter().all(|v| *v == 0.0 || v.abs() < 1e-15));
    }

    #[test]
    fn fpca_singular_gram_reports_rank() {
        let mut j = DMatrix::identity(4, 4);
        j[(3, 3)] = 0.0;
        let err = fpca(&DMatrix::zeros(3, 4), &j).unwrap_err().to_string();
        assert!(err.contains("rank 3 of 4"), "{err}");
    }

    #[test]
    fn select_ncomp_examples() {
        assert_eq!(select_ncomp(&[1.0, 0.0, 0.0], 0.99).unwrap(), 1);
        assert_eq!(select_ncomp(&[0.6, 0.3, 0.09, 0.01], 0.99).unwrap(), 4);
        assert_eq!(select_ncomp(&[0.995, 0.005], 0.99).unwrap(), 1);
        assert!(select_ncomp(&[0.0, 0.0], 0.99).is_err());
    }

    fn planted_basis() -> (FunctionalBasis, Vec<DVector<f64>>) {
        let sys = BSplineSystem::equidistant(0.0, 1.0, 12, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let raw: Vec<Vec<f64>> = (0..3).map(|_| (0..12).map(|_| rng.random::<f64>() - 0.5).collect()).collect();
        let d = j_orthonormal(&sys, &raw);
        let comps = d.iter().map(|v| v.as_slice().to_vec()).collect();
        let mean = (0..12).map(|g| g as f64 * 0.1).collect();
        let basis = FunctionalBasis::from_parts("b", sys, false, mean, vec![3.0, 2.0, 1.0], comps).unwrap();
        (basis, d)
    }

    #[test]
    fn scores_of_eigenfunctions() {
        let (basis, d) = planted_basis();
        let z = basis.scores(d[0].as_slice()).unwrap();
        assert!((z[0] - 1.0).abs() < 1e-12 && z[1].abs() < 1e-12 && z[2].abs() < 1e-12);
        let combo = &d[0] * 2.0 + &d[1] * 3.0;
        let z = basis.scores(combo.as_slice()).unwrap();
        assert!((z[0] - 2.0).abs() < 1e-12 && (z[1] - 3.0).abs() < 1e-12 && z[2].abs() < 1e-12);
    }

    #[test]
    fn scores_equal_quadrature_of_inner_product() {
        let (basis, _) = planted_basis();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a: Vec<f64> = (0..12).map(|_| rng.sample(StandardNormal)).collect();
        let z = basis.scores(&a).unwrap();
        let m = 12 * 10 * 100;
        let w = grid(m + 1, 0.0, 1.0);
        let eta = basis.eigenfunctions(&w).unwrap();
        let y: Vec<f64> = w.iter().map(|x| basis.system.eval_combination(&a, *x).unwrap()).collect();
        let h = 1.0 / m as f64;
        for l in 0..3 {
            let f: Vec<f64> = y.iter().zip(&eta[l]).map(|(a, b)| a * b).collect();
            let trap = h * (f.iter().sum::<f64>() - 0.5 * (f[0] + f[m]));
            assert!((trap - z[l]).abs() < 1e-6, "{trap} vs {}", z[l]);
        }
    }

    #[test]
    fn reconstruct_is_affine_in_scores() {
        let (basis, _) = planted_basis();
        let w = grid(50, 0.0, 1.0);
        let mean = basis.reconstruct(&[0.0; 3], &w).unwrap();
        let mean_direct: Vec<f64> = w.iter().map(|x| basis.system.eval_combination(&basis.mean_coefs, *x).unwrap()).collect();
        assert_eq!(mean, mean_direct);
        let z1 = [0.3, -1.0, 2.0];
        let z2 = [1.1, 0.4, -0.2];
        let z12: Vec<f64> = z1.iter().zip(&z2).map(|(a, b)| a + b).collect();
        let r1 = basis.reconstruct(&z1, &w).unwrap();
        let r2 = basis.reconstruct(&z2, &w).unwrap();
        let r12 = basis.reconstruct(&z12, &w).unwrap();
        for j in 0..50 {
            assert!(((r12[j] - mean[j]) - (r1[j] - mean[j]) - (r2[j] - mean[j])).abs() < 1e-12);
        }
        assert!(basis.reconstruct(&[0.0; 2], &w).is_err());
        assert!(basis.reconstruct(&[0.0; 3], &[1.5]).is_err());
    }

    #[test]
    fn sign_flip_leaves_reconstruction_invariant() {
        let (basis, _) = planted_basis();
        let mut flipped = basis.clone();
        flipped.components[1].iter_mut().for_each(|v| *v = -*v);
        let flipped =
            FunctionalBasis::from_parts("b", flipped.system, false, flipped.mean_coefs, flipped.eigenvalues, flipped.components)
                .unwrap();
        let a: Vec<f64> = (0..12).map(|g| (g as f64).cos()).collect();
        let w = grid(30, 0.0, 1.0);
        let r = basis.reconstruct(&basis.scores(&a).unwrap(), &w).unwrap();
        let rf = flipped.reconstruct(&flipped.scores(&a).unwrap(), &w).unwrap();
        for (x, y) in r.iter().zip(&rf) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
