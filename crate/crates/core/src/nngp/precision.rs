//! Sparse Cholesky of `Omega = C~^{-1} + I / tau^2` on a pattern fixed by the
//! neighbor graph. The symbolic analysis is done once per graph.

use std::sync::Arc;

use faer::dyn_stack::{MemBuffer, MemStack};
use faer::sparse::linalg::cholesky::supernodal::SupernodalLltRef;
use faer::sparse::linalg::cholesky::{
    factorize_symbolic_cholesky, CholeskySymbolicParams, LltRef, SymbolicCholesky, SymbolicCholeskyRaw,
    SymmetricOrdering,
};
use faer::sparse::linalg::SupernodalThreshold;
use faer::sparse::{SparseColMatRef, SymbolicSparseColMatRef};
use faer::{Conj, MatMut, Par, Side};

use super::factors::SparseFactors;
use super::graph::NeighborGraph;
use crate::error::{Error, Result};

/// Lower-triangular CSC pattern of `Omega` plus, for every Vecchia row, the
/// value slots its rank-one contribution touches.
pub struct PrecisionPattern {
    n: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    /// Packed lower triangle over the local list `[N(i).., i]`.
    slots: Vec<Vec<usize>>,
    diag: Vec<usize>,
    symbolic: SymbolicCholesky<usize>,
}

impl std::fmt::Debug for PrecisionPattern {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PrecisionPattern")
            .field("n", &self.n)
            .field("nnz", &self.row_idx.len())
            .field("factor_nnz", &self.symbolic.len_val())
            .finish()
    }
}

fn local(graph: &NeighborGraph, i: usize) -> impl Iterator<Item = usize> + '_ {
    graph.neighbors[i].iter().copied().chain(std::iter::once(i))
}

impl PrecisionPattern {
    pub fn new(graph: &NeighborGraph) -> Result<Arc<Self>> {
        let n = graph.len();
        let mut cols: Vec<Vec<usize>> = (0..n).map(|j| vec![j]).collect();
        for i in 0..n {
            let list: Vec<usize> = local(graph, i).collect();
            for (x, &r) in list.iter().enumerate() {
                for &c in &list[..x] {
                    cols[c].push(r);
                }
            }
        }
        let mut col_ptr = Vec::with_capacity(n + 1);
        let mut row_idx = Vec::new();
        col_ptr.push(0);
        for col in &mut cols {
            col.sort_unstable();
            col.dedup();
            row_idx.extend_from_slice(col);
            col_ptr.push(row_idx.len());
        }
        let find = |r: usize, c: usize| col_ptr[c] + row_idx[col_ptr[c]..col_ptr[c + 1]].binary_search(&r).expect("pattern entry");
        let diag = (0..n).map(|j| find(j, j)).collect();
        let slots = (0..n)
            .map(|i| {
                let list: Vec<usize> = local(graph, i).collect();
                let mut s = Vec::with_capacity(list.len() * (list.len() + 1) / 2);
                for (x, &r) in list.iter().enumerate() {
                    for &c in &list[..=x] {
                        s.push(find(r, c));
                    }
                }
                s
            })
            .collect();
        let sym = SymbolicSparseColMatRef::new_checked(n, n, &col_ptr, None, &row_idx);
        let params = CholeskySymbolicParams {
            supernodal_flop_ratio_threshold: SupernodalThreshold::FORCE_SUPERNODAL,
            ..Default::default()
        };
        let symbolic = factorize_symbolic_cholesky(sym, Side::Lower, SymmetricOrdering::Amd, params)
            .map_err(|e| Error::Numeric(format!("symbolic factorization failed: {e:?}")))?;
        Ok(Arc::new(Self { n, col_ptr, row_idx, slots, diag, symbolic }))
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.row_idx.len()
    }

    /// Number of stored values in the Cholesky factor.
    pub fn factor_nnz(&self) -> usize {
        self.symbolic.len_val()
    }

    /// Lower-triangle values of `C~^{-1} + shift I`.
    pub(crate) fn assemble(&self, graph: &NeighborGraph, factors: &SparseFactors, shift: f64) -> Vec<f64> {
        let mut vals = vec![0.0; self.nnz()];
        let mut w = Vec::with_capacity(graph.t + 1);
        for i in 0..self.n {
            w.clear();
            w.extend(factors.coefs[i].iter().map(|a| -a));
            w.push(1.0);
            let inv_d = 1.0 / factors.cond_var[i];
            let mut k = 0;
            for x in 0..w.len() {
                let wx = w[x] * inv_d;
                for y in 0..=x {
                    vals[self.slots[i][k]] += wx * w[y];
                    k += 1;
                }
            }
        }
        for &d in &self.diag {
            vals[d] += shift;
        }
        vals
    }

    /// Numeric factorization of `Omega` for nugget `tau2 > 0`.
    pub fn factorize(self: &Arc<Self>, graph: &NeighborGraph, factors: &SparseFactors, tau2: f64) -> Result<OmegaFactor> {
        let vals = self.assemble(graph, factors, 1.0 / tau2);
        let mat = SparseColMatRef::new(
            SymbolicSparseColMatRef::new_checked(self.n, self.n, &self.col_ptr, None, &self.row_idx),
            &vals,
        );
        let mut lvals = vec![0.0; self.symbolic.len_val()];
        let mut mem = MemBuffer::new(self.symbolic.factorize_numeric_llt_scratch::<f64>(Par::Seq, Default::default()));
        self.symbolic
            .factorize_numeric_llt(
                &mut lvals,
                mat,
                Side::Lower,
                Default::default(),
                Par::Seq,
                MemStack::new(&mut mem),
                Default::default(),
            )
            .map_err(|e| Error::Numeric(format!("precision factorization failed: {e:?}")))?;
        let log_det = match self.symbolic.raw() {
            SymbolicCholeskyRaw::Supernodal(s) => {
                let l = SupernodalLltRef::new(s, &lvals);
                2.0 * (0..s.n_supernodes())
                    .map(|k| {
                        let v = l.supernode(k).val();
                        (0..v.ncols()).map(|j| v[(j, j)].ln()).sum::<f64>()
                    })
                    .sum::<f64>()
            }
            SymbolicCholeskyRaw::Simplicial(_) => unreachable!("supernodal factorization is forced"),
        };
        Ok(OmegaFactor { pattern: Arc::clone(self), lvals, log_det })
    }
}

/// Numeric Cholesky factor of `Omega`.
pub struct OmegaFactor {
    pattern: Arc<PrecisionPattern>,
    lvals: Vec<f64>,
    log_det: f64,
}

impl OmegaFactor {
    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    /// Overwrites the column-major `n x k` block with `Omega^{-1}` times it.
    pub fn solve_in_place(&self, data: &mut [f64], ncols: usize) {
        let n = self.pattern.n;
        assert_eq!(data.len(), n * ncols);
        let sym = &self.pattern.symbolic;
        let mut mem = MemBuffer::new(sym.solve_in_place_scratch::<f64>(ncols, Par::Seq));
        let rhs = MatMut::from_column_major_slice_mut(data, n, ncols);
        LltRef::new(sym, &self.lvals).solve_in_place_with_conj(Conj::No, rhs, Par::Seq, MemStack::new(&mut mem));
    }
}
