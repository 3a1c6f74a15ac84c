//! Clamped B-spline bases on equidistant knots.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const GL_NODES: [f64; 5] = [
    -0.906_179_845_938_664_0,
    -0.538_469_310_105_683_1,
    0.0,
    0.538_469_310_105_683_1,
    0.906_179_845_938_664_0,
];
const GL_WEIGHTS: [f64; 5] = [
    0.236_926_885_056_189_1,
    0.478_628_670_499_366_5,
    0.568_888_888_888_888_9,
    0.478_628_670_499_366_5,
    0.236_926_885_056_189_1,
];

/// Highest degree for which 5-point Gauss–Legendre integrates products exactly.
pub const MAX_DEGREE: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BSplineSystem {
    degree: usize,
    n_basis: usize,
    knots: Vec<f64>,
}

impl BSplineSystem {
    /// `n_basis` functions of the given degree with equidistant interior knots
    /// over `[lower, upper]` and `degree + 1` repeated boundary knots.
    pub fn equidistant(lower: f64, upper: f64, n_basis: usize, degree: usize) -> Result<Self> {
        if !(lower < upper) || !lower.is_finite() || !upper.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "B-spline domain [{lower}, {upper}] is empty"
            )));
        }
        if degree > MAX_DEGREE {
            return Err(Error::InvalidParameter(format!(
                "B-spline degree {degree} exceeds supported maximum {MAX_DEGREE}"
            )));
        }
        if n_basis < degree + 1 {
            return Err(Error::InvalidParameter(format!(
                "{n_basis} basis functions cannot carry degree {degree}"
            )));
        }
        let spans = n_basis - degree;
        let mut knots = Vec::with_capacity(n_basis + degree + 1);
        knots.extend(std::iter::repeat_n(lower, degree));
        for k in 0..=spans {
            knots.push(if k == spans {
                upper
            } else {
                lower + (upper - lower) * k as f64 / spans as f64
            });
        }
        knots.extend(std::iter::repeat_n(upper, degree));
        Ok(Self {
            degree,
            n_basis,
            knots,
        })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn n_basis(&self) -> usize {
        self.n_basis
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.knots[self.degree], self.knots[self.n_basis])
    }

    fn check_domain(&self, x: f64) -> Result<()> {
        let (lo, hi) = self.domain();
        if x >= lo && x <= hi {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "wavelength {x} outside basis range [{lo}, {hi}]"
            )))
        }
    }

    /// Knot span index `s` with `knots[s] <= x < knots[s+1]`; the right end
    /// belongs to the last span.
    fn span(&self, x: f64) -> usize {
        let p = self.degree;
        let n = self.n_basis - 1;
        if x >= self.knots[n + 1] {
            return n;
        }
        let (mut lo, mut hi) = (p, n + 1);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if x < self.knots[mid] {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        lo
    }

    /// Nonzero basis values and their derivatives up to `order` at `x`.
    /// Returns the index of the first nonzero function and `ders[k][j]`,
    /// the k-th derivative of basis function `first + j`.
    pub fn nonzero_derivatives(&self, x: f64, order: usize) -> Result<(usize, Vec<Vec<f64>>)> {
        self.check_domain(x)?;
        let s = self.span(x);
        Ok((s - self.degree, self.ders_at_span(s, x, order)))
    }

    /// Nonzero basis values at `x`.
    pub fn nonzero(&self, x: f64) -> Result<(usize, Vec<f64>)> {
        let (first, mut ders) = self.nonzero_derivatives(x, 0)?;
        Ok((first, ders.swap_remove(0)))
    }

    /// All `n_basis` values at `x`.
    pub fn eval(&self, x: f64) -> Result<Vec<f64>> {
        let (first, vals) = self.nonzero(x)?;
        let mut out = vec![0.0; self.n_basis];
        out[first..first + vals.len()].copy_from_slice(&vals);
        Ok(out)
    }

    /// `Σ_g coefs[g] φ_g(x)`.
    pub fn eval_combination(&self, coefs: &[f64], x: f64) -> Result<f64> {
        let (first, vals) = self.nonzero(x)?;
        Ok(vals.iter().zip(&coefs[first..]).map(|(v, c)| v * c).sum())
    }

    fn ders_at_span(&self, s: usize, x: f64, order: usize) -> Vec<Vec<f64>> {
        let p = self.degree;
        let u = &self.knots;
        let mut ndu = vec![vec![0.0; p + 1]; p + 1];
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        ndu[0][0] = 1.0;
        for j in 1..=p {
            left[j] = x - u[s + 1 - j];
            right[j] = u[s + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                ndu[j][r] = right[r + 1] + left[j - r];
                let temp = ndu[r][j - 1] / ndu[j][r];
                ndu[r][j] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            ndu[j][j] = saved;
        }
        let mut ders = vec![vec![0.0; p + 1]; order + 1];
        for j in 0..=p {
            ders[0][j] = ndu[j][p];
        }
        let mut a = [vec![0.0; p + 1], vec![0.0; p + 1]];
        for r in 0..=p {
            let (mut s1, mut s2) = (0usize, 1usize);
            a[0][0] = 1.0;
            for k in 1..=order.min(p) {
                let mut d = 0.0;
                let rk = r as isize - k as isize;
                let pk = p - k;
                if r >= k {
                    a[s2][0] = a[s1][0] / ndu[pk + 1][rk as usize];
                    d = a[s2][0] * ndu[rk as usize][pk];
                }
                let j1 = if rk >= -1 { 1 } else { (-rk) as usize };
                let j2 = if (r as isize - 1) <= pk as isize { k - 1 } else { p - r };
                for j in j1..=j2 {
                    let idx = (rk + j as isize) as usize;
                    a[s2][j] = (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][idx];
                    d += a[s2][j] * ndu[idx][pk];
                }
                if r <= pk {
                    a[s2][k] = -a[s1][k - 1] / ndu[pk + 1][r];
                    d += a[s2][k] * ndu[r][pk];
                }
                ders[k][r] = d;
                std::mem::swap(&mut s1, &mut s2);
            }
        }
        let mut factor = p as f64;
        for k in 1..=order.min(p) {
            for v in ders[k].iter_mut() {
                *v *= factor;
            }
            factor *= (p - k) as f64;
        }
        ders
    }

    /// `∫ D^k φ_g D^k φ_h` over the domain, exact for supported degrees.
    fn inner_products(&self, order: usize) -> DMatrix<f64> {
        let g = self.n_basis;
        let mut out = DMatrix::zeros(g, g);
        if order > self.degree {
            return out;
        }
        for s in self.degree..self.n_basis {
            let (a, b) = (self.knots[s], self.knots[s + 1]);
            if b <= a {
                continue;
            }
            let half = 0.5 * (b - a);
            let mid = 0.5 * (a + b);
            let first = s - self.degree;
            for (node, w) in GL_NODES.iter().zip(GL_WEIGHTS) {
                let x = mid + half * node;
                let ders = self.ders_at_span(s, x, order);
                let v = &ders[order];
                for (i, vi) in v.iter().enumerate() {
                    for (j, vj) in v.iter().enumerate().skip(i) {
                        out[(first + i, first + j)] += w * half * vi * vj;
                    }
                }
            }
        }
        out.fill_lower_triangle_with_upper_triangle();
        out
    }

    /// Gram matrix `J = ∫ φ φᵀ`.
    pub fn gram(&self) -> DMatrix<f64> {
        self.inner_products(0)
    }

    /// Second-derivative roughness matrix `∫ φ'' φ''ᵀ`.
    pub fn roughness(&self) -> DMatrix<f64> {
        self.inner_products(2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Cox–de Boor recursion written directly from its definition.
    fn cox_de_boor(knots: &[f64], i: usize, p: usize, x: f64, last: bool) -> f64 {
        if p == 0 {
            let inside = knots[i] <= x && x < knots[i + 1];
            let right_end = last && x == knots[i + 1] && knots[i] < knots[i + 1];
            return if inside || right_end { 1.0 } else { 0.0 };
        }
        let mut v = 0.0;
        let d1 = knots[i + p] - knots[i];
        if d1 > 0.0 {
            v += (x - knots[i]) / d1 * cox_de_boor(knots, i, p - 1, x, last);
        }
        let d2 = knots[i + p + 1] - knots[i + 1];
        if d2 > 0.0 {
            v += (knots[i + p + 1] - x) / d2 * cox_de_boor(knots, i + 1, p - 1, x, last);
        }
        v
    }

    #[test]
    fn degree_zero_is_indicator() {
        let sys = BSplineSystem::equidistant(0.0, 4.0, 4, 0).unwrap();
        let v = sys.eval(2.5).unwrap();
        assert_eq!(v, vec![0.0, 0.0, 1.0, 0.0]);
        let v = sys.eval(2.0).unwrap();
        assert_eq!(v, vec![0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn matches_recursive_definition() {
        for degree in 0..=4 {
            let sys = BSplineSystem::equidistant(-1.0, 2.0, 11, degree).unwrap();
            for k in 0..=300 {
                let x = -1.0 + 3.0 * k as f64 / 300.0;
                let got = sys.eval(x).unwrap();
                for (g, gv) in got.iter().enumerate() {
                    let want = cox_de_boor(sys.knots(), g, degree, x, x == 2.0);
                    assert!((gv - want).abs() < 1e-13, "degree {degree} x={x} g={g}");
                }
            }
        }
    }

    #[test]
    fn partition_of_unity() {
        let sys = BSplineSystem::equidistant(757.0, 775.0, 500, 3).unwrap();
        for k in 0..=5000 {
            let x = 757.0 + 18.0 * k as f64 / 5000.0;
            let (_, v) = sys.nonzero(x).unwrap();
            assert_eq!(v.len(), 4);
            assert!(v.iter().all(|x| *x >= 0.0));
            assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn continuity_at_knots() {
        let sys = BSplineSystem::equidistant(0.0, 1.0, 9, 3).unwrap();
        for &k in &sys.knots()[4..9] {
            let a = sys.eval(k - 1e-11).unwrap();
            let b = sys.eval(k).unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn out_of_range_is_error() {
        let sys = BSplineSystem::equidistant(0.0, 1.0, 9, 3).unwrap();
        assert!(sys.eval(1.0 + 1e-9).is_err());
        assert!(sys.eval(-0.1).is_err());
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let sys = BSplineSystem::equidistant(0.0, 1.0, 12, 3).unwrap();
        let h = 1e-5;
        for &x in &[0.13, 0.41, 0.77] {
            let (first, d) = sys.nonzero_derivatives(x, 2).unwrap();
            let fp = sys.eval(x + h).unwrap();
            let fm = sys.eval(x - h).unwrap();
            let f0 = sys.eval(x).unwrap();
            for j in 0..4 {
                let g = first + j;
                let d1 = (fp[g] - fm[g]) / (2.0 * h);
                let d2 = (fp[g] - 2.0 * f0[g] + fm[g]) / (h * h);
                assert!((d[1][j] - d1).abs() < 1e-6 * (1.0 + d1.abs()));
                assert!((d[2][j] - d2).abs() < 1e-3 * (1.0 + d2.abs()));
            }
        }
    }

    #[test]
    fn gram_matches_fine_quadrature() {
        let sys = BSplineSystem::equidistant(0.0, 2.0, 8, 3).unwrap();
        let j = sys.gram();
        let n = 200_000;
        let h = 2.0 / n as f64;
        let mut oracle = DMatrix::<f64>::zeros(8, 8);
        for k in 0..n {
            let v = sys.eval((k as f64 + 0.5) * h).unwrap();
            for a in 0..8 {
                for b in 0..8 {
                    oracle[(a, b)] += h * v[a] * v[b];
                }
            }
        }
        assert!((&j - &oracle).amax() < 1e-9);
        assert!((&j - j.transpose()).amax() == 0.0);
        // row sums of J integrate φ_g, which is (t_{g+p+1} - t_g)/(p+1)
        let total: f64 = j.iter().sum();
        assert!((total - 2.0).abs() < 1e-12);
    }

    #[test]
    fn roughness_annihilates_linear_functions() {
        let sys = BSplineSystem::equidistant(0.0, 3.0, 10, 3).unwrap();
        let p = sys.roughness();
        // coefficients of f(x) = x are the Greville abscissae
        let k = sys.knots();
        let greville: Vec<f64> = (0..10).map(|g| (k[g + 1] + k[g + 2] + k[g + 3]) / 3.0).collect();
        let c = nalgebra::DVector::from_vec(greville.clone());
        assert!((&p * &c).amax() < 1e-10);
        for &x in &[0.2, 1.7, 3.0] {
            assert!((sys.eval_combination(&greville, x).unwrap() - x).abs() < 1e-12);
        }
    }
}
