//! Symmetric positive-definite band matrices and their Cholesky factors.

/// Lower band of a symmetric matrix with half-bandwidth `bw`.
#[derive(Debug, Clone)]
pub(crate) struct BandedSpd {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl BandedSpd {
    pub fn zeros(n: usize, bw: usize) -> Self {
        Self {
            n,
            bw,
            data: vec![0.0; n * (bw + 1)],
        }
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && i - j <= self.bw);
        i * (self.bw + 1) + (i - j)
    }

    /// Adds `v` at `(i, j)` with `j <= i <= j + bw`.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        if i - j > self.bw {
            0.0
        } else {
            self.data[self.idx(i, j)]
        }
    }

    /// Adds the outer product `w · v vᵀ` where `v` occupies rows `first..first+v.len()`.
    pub fn add_outer(&mut self, first: usize, v: &[f64], w: f64) {
        for (a, va) in v.iter().enumerate() {
            for (b, vb) in v.iter().enumerate().take(a + 1) {
                self.add(first + a, first + b, w * va * vb);
            }
        }
    }

    /// In-place Cholesky. Fails with the offending row when a pivot drops
    /// below `rel_tol` times the original diagonal entry.
    pub fn cholesky(mut self, rel_tol: f64) -> Result<BandedCholesky, usize> {
        let (n, bw) = (self.n, self.bw);
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            for j in lo..=i {
                let mut s = self.data[self.idx(i, j)];
                for k in lo.max(j.saturating_sub(bw))..j {
                    s -= self.data[self.idx(i, k)] * self.data[self.idx(j, k)];
                }
                if i == j {
                    let orig = self.data[self.idx(i, i)];
                    if !(s > rel_tol * orig) || !(orig > 0.0) {
                        return Err(i);
                    }
                    let k = self.idx(i, i);
                    self.data[k] = s.sqrt();
                } else {
                    let k = self.idx(i, j);
                    self.data[k] = s / self.data[self.idx(j, j)];
                }
            }
        }
        Ok(BandedCholesky { band: self })
    }
}

#[derive(Debug, Clone)]
pub(crate) struct BandedCholesky {
    band: BandedSpd,
}

impl BandedCholesky {
    pub fn solve_in_place(&self, x: &mut [f64]) {
        let b = &self.band;
        let n = b.n;
        for i in 0..n {
            let mut s = x[i];
            for k in i.saturating_sub(b.bw)..i {
                s -= b.data[b.idx(i, k)] * x[k];
            }
            x[i] = s / b.data[b.idx(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in (i + 1)..(i + b.bw + 1).min(n) {
                s -= b.data[b.idx(k, i)] * x[k];
            }
            x[i] = s / b.data[b.idx(i, i)];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};

    #[test]
    fn matches_dense_solve() {
        let n = 12;
        let bw = 3;
        let mut band = BandedSpd::zeros(n, bw);
        let mut dense = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i.saturating_sub(bw)..=i {
                let v = if i == j { 4.0 + i as f64 * 0.1 } else { 0.3 / (1.0 + (i - j) as f64) };
                band.add(i, j, v);
                dense[(i, j)] = v;
                dense[(j, i)] = v;
            }
        }
        let rhs: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let mut x = rhs.clone();
        band.cholesky(1e-12).unwrap().solve_in_place(&mut x);
        let want = dense.cholesky().unwrap().solve(&DVector::from_vec(rhs));
        for i in 0..n {
            assert!((x[i] - want[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn reports_singular_row() {
        let mut band = BandedSpd::zeros(3, 1);
        band.add(0, 0, 1.0);
        band.add(2, 2, 1.0);
        assert_eq!(band.cholesky(1e-12).unwrap_err(), 1);
    }
}
