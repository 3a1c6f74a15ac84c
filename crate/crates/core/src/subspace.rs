//! Gradient-based active subspaces for the standardized state vector.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::fda::select_ncomp;

/// Affine map `x̃ = D⁻¹(x - μ)` with diagonal `D`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateStandardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl StateStandardizer {
    pub fn new(mean: Vec<f64>, scale: Vec<f64>) -> Result<Self> {
        check_dim("standardizer scale", mean.len(), scale.len())?;
        if let Some(j) = scale.iter().position(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidParameter(format!(
                "scale entry {j} must be positive, got {}",
                scale[j]
            )));
        }
        Ok(Self { mean, scale })
    }

    /// Sample mean and standard deviation of each column of `rows`.
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if n < 2 {
            return Err(Error::Data(format!("standardizer needs at least 2 rows, got {n}")));
        }
        let m = rows[0].len();
        let mut mean = vec![0.0; m];
        for r in rows {
            check_dim("state row", m, r.len())?;
            for (a, v) in mean.iter_mut().zip(r) {
                *a += v;
            }
        }
        mean.iter_mut().for_each(|a| *a /= n as f64);
        let mut var = vec![0.0; m];
        for r in rows {
            for ((s, v), mu) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - mu) * (v - mu);
            }
        }
        let scale = var.into_iter().map(|s| (s / (n - 1) as f64).sqrt()).collect();
        Self::new(mean, scale)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn standardize(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim("standardize", self.dim(), x.len())?;
        Ok(x.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((x, m), s)| (x - m) / s)
            .collect())
    }

    pub fn destandardize(&self, z: &[f64]) -> Result<Vec<f64>> {
        check_dim("destandardize", self.dim(), z.len())?;
        Ok(z.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((z, m), s)| m + s * z)
            .collect())
    }
}

/// Gradient of `f(x̃) = (y - F)ᵀ Σ_ε⁻¹ (y - F)` with respect to the
/// standardized state: `-2 (K D)ᵀ Σ_ε⁻¹ (y - F)`. Entries where `y` or `F`
/// is missing are skipped.
pub fn misfit_gradient(
    y: &[f64],
    forward: &[f64],
    jacobian: &DMatrix<f64>,
    scale: &[f64],
    noise_var: &[f64],
) -> Result<Vec<f64>> {
    let (m_out, m) = jacobian.shape();
    check_dim("misfit observation", m_out, y.len())?;
    check_dim("misfit forward output", m_out, forward.len())?;
    check_dim("misfit noise variances", m_out, noise_var.len())?;
    check_dim("misfit state scale", m, scale.len())?;
    let mut weighted = DVector::zeros(m_out);
    for i in 0..m_out {
        let r = y[i] - forward[i];
        if r.is_nan() {
            continue;
        }
        if !(noise_var[i] > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "noise variance at output {i} must be positive, got {}",
                noise_var[i]
            )));
        }
        weighted[i] = r / noise_var[i];
    }
    let g = jacobian.tr_mul(&weighted);
    Ok(g.iter().zip(scale).map(|(g, d)| -2.0 * d * g).collect())
}

fn outer_sum(grads: &[Vec<f64>], m: usize) -> DMatrix<f64> {
    if grads.len() <= 16 {
        let mut acc = DMatrix::zeros(m, m);
        for g in grads {
            let v = DVector::from_column_slice(g);
            acc.syger(1.0, &v, &v, 1.0);
        }
        acc.fill_upper_triangle_with_lower_triangle();
        return acc;
    }
    let (a, b) = grads.split_at(grads.len() / 2);
    let (sa, sb) = rayon::join(|| outer_sum(a, m), || outer_sum(b, m));
    sa + sb
}

/// Monte Carlo sensitivity matrix `N⁻¹ Σ_j ∇f_j ∇f_jᵀ`, reduced pairwise in
/// a fixed tree so the result does not depend on thread count.
pub fn sensitivity_matrix(grads: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let first = grads
        .first()
        .ok_or_else(|| Error::Data("sensitivity matrix needs at least one gradient".into()))?;
    let m = first.len();
    for (j, g) in grads.iter().enumerate() {
        check_dim("gradient sample", m, g.len())?;
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data(format!("gradient sample {j} has non-finite entries")));
        }
    }
    Ok(outer_sum(grads, m) / grads.len() as f64)
}

/// How many leading eigenvectors to keep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule", content = "value")]
pub enum Selection {
    Fixed(usize),
    /// Largest ratio `λ_j / λ_{j+1}` over `j <= m/2`.
    Gap,
    /// Smallest `p` whose cumulative eigenvalue share exceeds the value.
    Cumulative(f64),
}

impl Default for Selection {
    fn default() -> Self {
        Selection::Cumulative(0.95)
    }
}

/// Leading eigenvectors of the sensitivity matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActiveProjection {
    /// Columns of `P`, each of length `m`.
    pub columns: Vec<Vec<f64>>,
    /// All eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
}

impl ActiveProjection {
    pub fn dim(&self) -> usize {
        self.columns.len()
    }

    pub fn state_dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        let m = self.state_dim();
        DMatrix::from_fn(m, self.dim(), |i, j| self.columns[j][i])
    }

    /// Active variables `s = Pᵀ x̃`.
    pub fn project(&self, standardized: &[f64]) -> Result<Vec<f64>> {
        check_dim("project", self.state_dim(), standardized.len())?;
        Ok(self
            .columns
            .iter()
            .map(|c| c.iter().zip(standardized).map(|(a, b)| a * b).sum())
            .collect())
    }
}

/// Index of the largest consecutive eigenvalue ratio, as a component count.
fn gap_rule(eigenvalues: &[f64]) -> Result<usize> {
    let m = eigenvalues.len();
    let top = eigenvalues.first().copied().unwrap_or(0.0);
    if !(top > 0.0) {
        return Err(Error::Numeric("sensitivity matrix is zero; no active directions".into()));
    }
    // eigenvalues at rounding level are exact zeros for the purpose of ratios
    let floor = top * m as f64 * f64::EPSILON * 16.0;
    let clean: Vec<f64> = eigenvalues.iter().map(|v| if *v > floor { *v } else { 0.0 }).collect();
    let mut best = (1usize, f64::NEG_INFINITY);
    for j in 1..=(m / 2).max(1) {
        if j >= m {
            break;
        }
        let (a, b) = (clean[j - 1], clean[j]);
        if a == 0.0 {
            break;
        }
        let ratio = if b == 0.0 { f64::INFINITY } else { a / b };
        if ratio > best.1 {
            best = (j, ratio);
        }
    }
    Ok(best.0)
}

/// Eigendecomposition of `Σ̂` with descending eigenvalues; each eigenvector
/// is signed so its largest-magnitude entry is positive.
pub fn active_subspace(sensitivity: &DMatrix<f64>, selection: Selection) -> Result<ActiveProjection> {
    let m = sensitivity.nrows();
    check_dim("sensitivity matrix columns", m, sensitivity.ncols())?;
    let eig = sensitivity.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let eigenvalues: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k].max(0.0)).collect();
    let p = match selection {
        Selection::Fixed(p) => p,
        Selection::Gap => gap_rule(&eigenvalues)?,
        Selection::Cumulative(t) => select_ncomp(&eigenvalues, t)?,
    };
    if p == 0 || p > m {
        return Err(Error::InvalidParameter(format!(
            "active dimension {p} must lie in 1..={m}"
        )));
    }
    let columns = order[..p]
        .iter()
        .map(|&k| {
            let mut v: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
            let lead = v.iter().copied().fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
            if lead < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            v
        })
        .collect();
    Ok(ActiveProjection {
        columns,
        eigenvalues,
    })
}

/// Spectral norm of `P₁P₁ᵀ - P₂P₂ᵀ`, the distance between two subspaces.
pub fn subspace_distance(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let diff = a * a.transpose() - b * b.transpose();
    diff.symmetric_eigenvalues().amax()
}

/// Gradients for a batch of runs, in run order.
pub fn batch_gradients<F>(n: usize, gradient: F) -> Result<Vec<Vec<f64>>>
where
    F: Fn(usize) -> Result<Vec<f64>> + Sync + Send,
{
    (0..n).into_par_iter().map(gradient).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| StandardNormal.sample(rng)).collect()
    }

    #[test]
    fn standardize_examples() {
        let st = StateStandardizer::new(vec![1.0, -2.0, 0.5], vec![2.0, 0.5, 1.0]).unwrap();
        assert_eq!(st.standardize(&[1.0, -2.0, 0.5]).unwrap(), vec![0.0; 3]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = gaussian(&mut rng, 3);
        let back = st.destandardize(&st.standardize(&x).unwrap()).unwrap();
        for (a, b) in x.iter().zip(&back) {
            assert!((a - b).abs() < 1e-12);
        }
        let unit = StateStandardizer::new(vec![1.0, 1.0], vec![1.0, 1.0]).unwrap();
        assert_eq!(unit.standardize(&[3.0, 0.0]).unwrap(), vec![2.0, -1.0]);
        assert!(StateStandardizer::new(vec![0.0], vec![0.0]).is_err());
        assert!(st.standardize(&[0.0]).is_err());
    }

    #[test]
    fn misfit_gradient_examples() {
        let k = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 0.0, 0.5, -1.0, 3.0]);
        let zero = misfit_gradient(&[1.0, 2.0], &[1.0, 2.0], &k, &[1.0; 3], &[1.0; 2]).unwrap();
        assert_eq!(zero, vec![0.0; 3]);
        let zk = DMatrix::zeros(2, 3);
        assert_eq!(misfit_gradient(&[1.0, 2.0], &[0.0, 0.0], &zk, &[1.0; 3], &[1.0; 2]).unwrap(), vec![0.0; 3]);
        let scalar = misfit_gradient(&[1.0], &[0.0], &DMatrix::from_element(1, 1, 1.0), &[1.0], &[1.0]).unwrap();
        assert_eq!(scalar, vec![-2.0]);
        assert!(matches!(
            misfit_gradient(&[1.0], &[0.0, 0.0], &k, &[1.0; 3], &[1.0; 2]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn misfit_gradient_matches_finite_differences() {
        // f(x̃) = Σ (y - F(μ + D x̃))² / σ² with linear F = K x
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let k = DMatrix::<f64>::from_fn(4, 3, |_, _| StandardNormal.sample(&mut rng));
        let scale = [0.5, 2.0, 1.5];
        let noise = [0.1, 0.2, 0.3, 0.4];
        let y = gaussian(&mut rng, 4);
        let xt = gaussian(&mut rng, 3);
        let f = |xt: &[f64]| {
            let x = DVector::from_iterator(3, xt.iter().zip(&scale).map(|(a, d)| a * d));
            let out = &k * x;
            (0..4).map(|i| (y[i] - out[i]).powi(2) / noise[i]).sum::<f64>()
        };
        let x = DVector::from_iterator(3, xt.iter().zip(&scale).map(|(a, d)| a * d));
        let fwd: Vec<f64> = (&k * x).iter().copied().collect();
        let g = misfit_gradient(&y, &fwd, &k, &scale, &noise).unwrap();
        let h = 1e-6;
        for j in 0..3 {
            let mut p = xt.clone();
            let mut q = xt.clone();
            p[j] += h;
            q[j] -= h;
            let fd = (f(&p) - f(&q)) / (2.0 * h);
            assert!((fd - g[j]).abs() < 1e-6 * (1.0 + fd.abs()));
        }
    }

    #[test]
    fn sensitivity_examples() {
        let s = sensitivity_matrix(&vec![vec![1.0, 0.0, 0.0]; 5]).unwrap();
        assert_eq!(s, DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]));
        let s = sensitivity_matrix(&[vec![1.0, 1.0]]).unwrap();
        assert_eq!(s, DMatrix::from_element(2, 2, 1.0));
        assert!(sensitivity_matrix(&[]).is_err());
    }

    #[test]
    fn sensitivity_rank_of_planted_subspace() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let basis = DMatrix::<f64>::from_fn(12, 4, |_, _| StandardNormal.sample(&mut rng)).qr().q();
        let grads: Vec<Vec<f64>> = (0..200)
            .map(|_| {
                let c = DVector::from_vec(gaussian(&mut rng, 4));
                (&basis * c).iter().copied().collect()
            })
            .collect();
        let proj = active_subspace(&sensitivity_matrix(&grads).unwrap(), Selection::Fixed(4)).unwrap();
        assert!(proj.eigenvalues[4] < 1e-12 * proj.eigenvalues[0]);
        let trace: f64 = grads.iter().map(|g| g.iter().map(|v| v * v).sum::<f64>()).sum::<f64>() / 200.0;
        assert!((proj.eigenvalues.iter().sum::<f64>() - trace).abs() < 1e-10 * trace);
        assert!(subspace_distance(&proj.matrix(), &basis) < 1e-10);
    }

    #[test]
    fn sensitivity_is_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let grads: Vec<Vec<f64>> = (0..37).map(|_| gaussian(&mut rng, 5)).collect();
        let mut rev = grads.clone();
        rev.reverse();
        let a = sensitivity_matrix(&grads).unwrap();
        let b = sensitivity_matrix(&rev).unwrap();
        assert!((a - b).amax() < 1e-14);
    }

    #[test]
    fn active_subspace_examples() {
        let s = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 1.0, 0.0]));
        let p = active_subspace(&s, Selection::Fixed(1)).unwrap();
        assert_eq!(p.eigenvalues, vec![4.0, 1.0, 0.0]);
        assert_eq!(p.columns, vec![vec![1.0, 0.0, 0.0]]);
        assert!(active_subspace(&s, Selection::Fixed(4)).is_err());

        let a = DVector::from_vec(vec![1.0, -2.0, 2.0]);
        let p = active_subspace(&(&a * a.transpose()), Selection::Fixed(1)).unwrap();
        let unit = &a / a.norm();
        let dot: f64 = p.columns[0].iter().zip(unit.iter()).map(|(x, y)| x * y).sum();
        assert!((dot.abs() - 1.0).abs() < 1e-12);
        // largest-magnitude entry is positive
        assert!(p.columns[0][1] > 0.0 || p.columns[0][2] > 0.0);
    }

    #[test]
    fn quadratic_ridge_is_recovered() {
        let m = 10;
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = DVector::from_vec(gaussian(&mut rng, m));
        let grads: Vec<Vec<f64>> = (0..100)
            .map(|_| {
                let x = DVector::from_vec(gaussian(&mut rng, m));
                (&a * (2.0 * a.dot(&x))).iter().copied().collect()
            })
            .collect();
        let p = active_subspace(&sensitivity_matrix(&grads).unwrap(), Selection::Gap).unwrap();
        assert_eq!(p.dim(), 1);
        let unit = DMatrix::from_column_slice(m, 1, (&a / a.norm()).as_slice());
        assert!(subspace_distance(&p.matrix(), &unit) < 1e-10);
    }

    #[test]
    fn selection_rules() {
        let s = DMatrix::from_diagonal(&DVector::from_vec(vec![10.0, 9.0, 1.0, 0.5, 0.4, 0.3]));
        assert_eq!(active_subspace(&s, Selection::Gap).unwrap().dim(), 2);
        assert_eq!(active_subspace(&s, Selection::Cumulative(0.8)).unwrap().dim(), 2);
        assert_eq!(active_subspace(&s, Selection::Cumulative(0.95)).unwrap().dim(), 4);
        // ties go to the smaller dimension
        let t = DMatrix::from_diagonal(&DVector::from_vec(vec![8.0, 4.0, 2.0, 1.0]));
        assert_eq!(active_subspace(&t, Selection::Gap).unwrap().dim(), 1);
    }

    #[test]
    fn projection_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let q = DMatrix::<f64>::from_fn(6, 6, |_, _| StandardNormal.sample(&mut rng)).qr().q();
        let proj = ActiveProjection {
            columns: (0..2).map(|j| q.column(j).iter().copied().collect()).collect(),
            eigenvalues: vec![2.0, 1.0, 0.0, 0.0, 0.0, 0.0],
        };
        let ortho: Vec<f64> = q.column(4).iter().copied().collect();
        assert!(proj.project(&ortho).unwrap().iter().all(|v| v.abs() < 1e-12));
        let s = proj.project(&proj.columns[0].clone()).unwrap();
        assert!((s[0] - 1.0).abs() < 1e-12 && s[1].abs() < 1e-12);
        let x = gaussian(&mut rng, 6);
        let s = proj.project(&x).unwrap();
        assert!(s.iter().map(|v| v * v).sum::<f64>() <= x.iter().map(|v| v * v).sum::<f64>() + 1e-12);
        let p = proj.matrix();
        assert!((p.transpose() * &p - DMatrix::identity(2, 2)).amax() < 1e-10);
    }
}
