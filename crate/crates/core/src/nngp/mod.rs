//! Nearest-neighbor Gaussian process machinery: ordering, history sets,
//! Vecchia factors and the nugget-aware quadratic forms the integrated
//! likelihoods need.

mod factors;
mod graph;
mod precision;

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::Serialize;

pub use factors::{sparse_factors, SparseFactors, JITTER};
pub use graph::{neighbor_sets, order_reference, predict_neighbors, NeighborGraph, Ordering};
pub(crate) use graph::predict_neighbors_inv;
pub use precision::{OmegaFactor, PrecisionPattern};

use crate::error::{check_dim, Error, Result};
use crate::kernels::{Inputs, KernelSpec};

/// Reference set in NNGP order with its neighbor graph and the symbolic
/// analysis of the precision pattern.
#[derive(Debug, Clone)]
pub struct NngpStructure {
    order: Vec<usize>,
    inputs: Inputs,
    graph: NeighborGraph,
    pattern: Arc<PrecisionPattern>,
}

#[derive(Debug, Serialize)]
pub struct GraphExport<'a> {
    /// `order[k]` is the original index of the k-th ordered input.
    pub order: &'a [usize],
    pub t: usize,
    pub neighbors: &'a [Vec<usize>],
}

impl NngpStructure {
    pub fn build(inputs: &Inputs, ordering: Ordering, t: usize, seed: u64) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::Data("reference set is empty".into()));
        }
        let order = order_reference(inputs, ordering, seed);
        let ordered = inputs.select(&order);
        let graph = neighbor_sets(&ordered, t)?;
        let pattern = PrecisionPattern::new(&graph)?;
        log::debug!("precision pattern: {pattern:?}");
        Ok(Self { order, inputs: ordered, graph, pattern })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    /// Inputs in NNGP order.
    pub fn inputs(&self) -> &Inputs {
        &self.inputs
    }

    pub fn graph(&self) -> &NeighborGraph {
        &self.graph
    }

    pub fn pattern(&self) -> &PrecisionPattern {
        &self.pattern
    }

    pub fn export(&self) -> GraphExport<'_> {
        GraphExport { order: &self.order, t: self.graph.t, neighbors: &self.graph.neighbors }
    }

    /// Rows of `m` (original order) permuted into NNGP order.
    pub fn reorder_rows(&self, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_dim("rows to reorder", self.len(), m.nrows())?;
        Ok(m.select_rows(self.order.iter()))
    }

    pub fn factors(&self, spec: &KernelSpec) -> Result<SparseFactors> {
        check_dim("kernel ranges", self.inputs.dim(), spec.dim())?;
        sparse_factors(&self.inputs, &self.graph, &spec.correlation())
    }

    /// Solver for `R = C~ + tau2 I` built on precomputed factors.
    pub fn system<'a>(&'a self, factors: &'a SparseFactors, tau2: f64) -> Result<NuggetSystem<'a>> {
        if !(tau2 >= 0.0 && tau2.is_finite()) {
            return Err(Error::InvalidParameter(format!("nugget must be finite and >= 0, got {tau2}")));
        }
        let omega = if tau2 > 0.0 { Some(self.pattern.factorize(&self.graph, factors, tau2)?) } else { None };
        Ok(NuggetSystem { structure: self, factors, tau2, omega })
    }
}

/// `R = C~ + tau2 I` with `R^{-1} = tau2^{-1} Omega^{-1} C~^{-1}` and
/// `log|R| = log|Omega| + log|C~| + n log tau2`.
pub struct NuggetSystem<'a> {
    structure: &'a NngpStructure,
    factors: &'a SparseFactors,
    tau2: f64,
    omega: Option<OmegaFactor>,
}

impl NuggetSystem<'_> {
    pub fn log_det(&self) -> f64 {
        let base = self.factors.log_det();
        match &self.omega {
            Some(o) => o.log_det() + base + self.structure.len() as f64 * self.tau2.ln(),
            None => base,
        }
    }

    /// `R^{-1} B` for `B` in NNGP row order.
    pub fn solve(&self, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let n = self.structure.len();
        check_dim("right-hand side rows", n, b.nrows())?;
        let g = &self.structure.graph;
        let mut out = DMatrix::zeros(n, b.ncols());
        for (k, col) in b.column_iter().enumerate() {
            let y = self.factors.apply_precision(g, col.as_slice());
            out.column_mut(k).copy_from_slice(&y);
        }
        if let Some(o) = &self.omega {
            out /= self.tau2;
            o.solve_in_place(out.as_mut_slice(), b.ncols());
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite value in R^{-1} solve".into()));
        }
        Ok(out)
    }
}

/// Gram blocks of `[H Z]` under `R^{-1}`.
#[derive(Debug, Clone)]
pub struct MarginalQuantities {
    pub log_det_r: f64,
    pub hrh: DMatrix<f64>,
    pub hrz: DMatrix<f64>,
    pub zrz: DMatrix<f64>,
}

/// `log|R|`, `H^T R^{-1} H`, `H^T R^{-1} Z` and `Z^T R^{-1} Z` with `H`, `Z`
/// given in NNGP row order.
pub fn marginal_quantities(
    structure: &NngpStructure,
    factors: &SparseFactors,
    tau2: f64,
    h: &DMatrix<f64>,
    z: &DMatrix<f64>,
) -> Result<MarginalQuantities> {
    check_dim("trend rows", structure.len(), h.nrows())?;
    check_dim("output rows", structure.len(), z.nrows())?;
    let sys = structure.system(factors, tau2)?;
    let (p, q) = (h.ncols(), z.ncols());
    let mut b = DMatrix::zeros(structure.len(), p + q);
    b.columns_mut(0, p).copy_from(h);
    b.columns_mut(p, q).copy_from(z);
    let x = sys.solve(&b)?;
    let mut gram = b.transpose() * x;
    gram = (&gram + gram.transpose()) * 0.5;
    Ok(MarginalQuantities {
        log_det_r: sys.log_det(),
        hrh: gram.view((0, 0), (p, p)).into_owned(),
        hrz: gram.view((0, p), (p, q)).into_owned(),
        zrz: gram.view((p, p), (q, q)).into_owned(),
    })
}
