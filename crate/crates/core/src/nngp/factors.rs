//! Vecchia factors `A` (strictly lower, row `i` supported on `N(i)`) and the
//! conditional variances `D`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::graph::NeighborGraph;
use crate::error::{check_dim, Error, Result};
use crate::kernels::{Correlation, Inputs};

/// Diagonal jitter used when a neighbor block is numerically singular.
pub const JITTER: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct SparseFactors {
    /// `coefs[i][k]` multiplies neighbor `graph.neighbors[i][k]`.
    pub coefs: Vec<Vec<f64>>,
    pub cond_var: Vec<f64>,
    /// Rows that needed jitter.
    pub jittered: Vec<usize>,
}

fn solve_row(block: &DMatrix<f64>, cross: &DVector<f64>) -> Option<(Vec<f64>, f64)> {
    let chol = block.clone().cholesky()?;
    let a = chol.solve(cross);
    let d = 1.0 - cross.dot(&a);
    (d > 0.0 && d.is_finite()).then(|| (a.as_slice().to_vec(), d))
}

/// Computes `A` and `D` for the ordered reference inputs. Rows whose neighbor
/// block fails to factor are retried once with [`JITTER`] on the diagonal.
pub fn sparse_factors(ordered: &Inputs, graph: &NeighborGraph, corr: &Correlation) -> Result<SparseFactors> {
    check_dim("neighbor graph", ordered.len(), graph.len())?;
    check_dim("correlation", ordered.dim(), corr.dim())?;
    let rows: Vec<Result<(Vec<f64>, f64, bool)>> = graph
        .neighbors
        .par_iter()
        .enumerate()
        .map(|(i, nb)| {
            if nb.is_empty() {
                return Ok((Vec::new(), 1.0, false));
            }
            let m = nb.len();
            let xi = ordered.row(i);
            let mut block = DMatrix::from_element(m, m, 1.0);
            for a in 0..m {
                for b in 0..a {
                    let c = corr.eval(ordered.row(nb[a]), ordered.row(nb[b]));
                    block[(a, b)] = c;
                    block[(b, a)] = c;
                }
            }
            let cross = DVector::from_iterator(m, nb.iter().map(|&j| corr.eval(xi, ordered.row(j))));
            if let Some((a, d)) = solve_row(&block, &cross) {
                return Ok((a, d, false));
            }
            for k in 0..m {
                block[(k, k)] += JITTER;
            }
            solve_row(&block, &cross)
                .map(|(a, d)| (a, d, true))
                .ok_or_else(|| Error::Numeric(format!("neighbor block of row {i} is singular after jitter")))
        })
        .collect();
    let mut out = SparseFactors {
        coefs: Vec::with_capacity(rows.len()),
        cond_var: Vec::with_capacity(rows.len()),
        jittered: Vec::new(),
    };
    for (i, row) in rows.into_iter().enumerate() {
        let (a, d, jit) = row?;
        if jit {
            out.jittered.push(i);
        }
        out.coefs.push(a);
        out.cond_var.push(d);
    }
    if !out.jittered.is_empty() {
        log::warn!("added jitter {JITTER:e} to {} neighbor blocks", out.jittered.len());
    }
    Ok(out)
}

impl SparseFactors {
    pub fn log_det(&self) -> f64 {
        self.cond_var.iter().map(|d| d.ln()).sum()
    }

    /// `(I - A) x`.
    pub fn apply_i_minus_a(&self, graph: &NeighborGraph, x: &[f64]) -> Vec<f64> {
        graph
            .neighbors
            .iter()
            .zip(&self.coefs)
            .enumerate()
            .map(|(i, (nb, a))| x[i] - nb.iter().zip(a).map(|(&j, c)| c * x[j]).sum::<f64>())
            .collect()
    }

    /// `(I - A)^T y`.
    pub fn apply_i_minus_a_t(&self, graph: &NeighborGraph, y: &[f64]) -> Vec<f64> {
        let mut out = y.to_vec();
        for (i, (nb, a)) in graph.neighbors.iter().zip(&self.coefs).enumerate() {
            for (&j, c) in nb.iter().zip(a) {
                out[j] -= c * y[i];
            }
        }
        out
    }

    /// Approximate precision applied to a vector, `(I - A)^T D^{-1} (I - A) x`.
    pub fn apply_precision(&self, graph: &NeighborGraph, x: &[f64]) -> Vec<f64> {
        let mut y = self.apply_i_minus_a(graph, x);
        for (v, d) in y.iter_mut().zip(&self.cond_var) {
            *v /= d;
        }
        self.apply_i_minus_a_t(graph, &y)
    }

    /// Dense approximate covariance `(I - A)^{-1} D (I - A)^{-T}`, for checks.
    pub fn dense_covariance(&self, graph: &NeighborGraph) -> DMatrix<f64> {
        let n = self.cond_var.len();
        let mut ia = DMatrix::<f64>::identity(n, n);
        for (i, (nb, a)) in graph.neighbors.iter().zip(&self.coefs).enumerate() {
            for (&j, c) in nb.iter().zip(a) {
                ia[(i, j)] -= c;
            }
        }
        let inv = ia.try_inverse().expect("unit lower triangular");
        &inv * DMatrix::from_diagonal(&DVector::from_column_slice(&self.cond_var)) * inv.transpose()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{corr_matrix, Family, KernelSpec};
    use crate::nngp::graph::neighbor_sets;

    fn spec(range: f64) -> KernelSpec {
        KernelSpec::new(Family::Matern { nu: 2.5 }, vec![range], 0.0).unwrap()
    }

    #[test]
    fn first_row_and_equicorrelated_example() {
        let x = Inputs::new(1, vec![0.0, 1.0]).unwrap();
        let g = neighbor_sets(&x, 1).unwrap();
        let s = KernelSpec::new(Family::PowerExponential { alpha: 1.0 }, vec![1.0 / 0.5f64.ln().abs()], 0.0).unwrap();
        let f = sparse_factors(&x, &g, &s.correlation()).unwrap();
        assert!(f.coefs[0].is_empty());
        assert_eq!(f.cond_var[0], 1.0);
        assert!((f.coefs[1][0] - 0.5).abs() < 1e-12);
        assert!((f.cond_var[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn full_history_reproduces_exact_covariance() {
        let pts: Vec<f64> = (0..12).map(|i| (i as f64 * 0.37).sin() * 3.0).collect();
        let mut x = Inputs::new(1, pts).unwrap();
        let order = crate::nngp::graph::order_reference(&x, Default::default(), 0);
        x = x.select(&order);
        let g = neighbor_sets(&x, 11).unwrap();
        let s = spec(0.8);
        let f = sparse_factors(&x, &g, &s.correlation()).unwrap();
        let exact = corr_matrix(&x, &s).unwrap();
        assert!((f.dense_covariance(&g) - exact).amax() < 1e-8);
        assert!(f.cond_var.iter().all(|&d| d > 0.0 && d <= 1.0));
    }

    #[test]
    fn precision_application_inverts_covariance() {
        let x = Inputs::new(1, (0..30).map(|i| i as f64 * 0.3).collect()).unwrap();
        let g = neighbor_sets(&x, 4).unwrap();
        let f = sparse_factors(&x, &g, &spec(1.0).correlation()).unwrap();
        let cov = f.dense_covariance(&g);
        let v: Vec<f64> = (0..30).map(|i| (i as f64).cos()).collect();
        let back = &cov * DVector::from_vec(f.apply_precision(&g, &v));
        for i in 0..30 {
            assert!((back[i] - v[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn duplicate_inputs_trigger_jitter() {
        let x = Inputs::new(1, vec![0.0, 0.5, 0.5, 1.0]).unwrap();
        let g = neighbor_sets(&x, 3).unwrap();
        let f = sparse_factors(&x, &g, &spec(1.0).correlation()).unwrap();
        assert!(f.jittered.contains(&3));
        assert!(f.cond_var.iter().all(|&d| d > 0.0));
    }
}
