//! Reference ordering and nearest-neighbor history sets.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::kernels::{scaled_distance_sq_inv, Inputs};
use crate::rng;

/// Ordering applied to the reference set before building history sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ordering {
    #[default]
    FirstCoordinate,
    CoordinateSum,
    Random,
}

/// Permutation sorting the inputs by the ordering key. Ties fall back to the
/// second coordinate, then to the original index.
pub fn order_reference(inputs: &Inputs, ordering: Ordering, seed: u64) -> Vec<usize> {
    let n = inputs.len();
    let mut idx: Vec<usize> = (0..n).collect();
    let second = |i: usize| inputs.row(i).get(1).copied().unwrap_or(0.0);
    match ordering {
        Ordering::FirstCoordinate => idx.sort_by(|&a, &b| {
            inputs.row(a)[0]
                .total_cmp(&inputs.row(b)[0])
                .then(second(a).total_cmp(&second(b)))
                .then(a.cmp(&b))
        }),
        Ordering::CoordinateSum => {
            let key: Vec<f64> = inputs.rows().map(|r| r.iter().sum()).collect();
            idx.sort_by(|&a, &b| key[a].total_cmp(&key[b]).then(second(a).total_cmp(&second(b))).then(a.cmp(&b)))
        }
        Ordering::Random => idx.shuffle(&mut rng::stream(seed, "nngp/ordering")),
    }
    idx
}

/// History neighbor sets over an ordered reference set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborGraph {
    pub t: usize,
    /// `neighbors[i]` holds indices `< i`, in ascending order.
    pub neighbors: Vec<Vec<usize>>,
}

impl NeighborGraph {
    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    /// Checks the structural invariants: strict history and set sizes.
    pub fn validate(&self) -> Result<()> {
        for (i, nb) in self.neighbors.iter().enumerate() {
            if nb.len() != i.min(self.t) {
                return Err(Error::Data(format!(
                    "row {i} has {} neighbors, expected {}",
                    nb.len(),
                    i.min(self.t)
                )));
            }
            if nb.iter().any(|&j| j >= i) || nb.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Data(format!("row {i} violates the strict-history ordering")));
            }
        }
        Ok(())
    }
}

fn nearest(reference: &Inputs, pool: usize, point: &[f64], inv_ranges: &[f64], t: usize) -> Vec<usize> {
    let mut cand: Vec<(f64, usize)> = (0..pool)
        .map(|j| (scaled_distance_sq_inv(point, reference.row(j), inv_ranges), j))
        .collect();
    let by_dist = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if t < cand.len() {
        cand.select_nth_unstable_by(t, by_dist);
        cand.truncate(t);
    }
    let mut out: Vec<usize> = cand.into_iter().map(|c| c.1).collect();
    out.sort_unstable();
    out
}

/// For each position `i`, the `min(i, t)` nearest earlier positions under
/// unit ranges (brute force).
pub fn neighbor_sets(ordered: &Inputs, t: usize) -> Result<NeighborGraph> {
    if t == 0 {
        return Err(Error::InvalidParameter("neighbor count must be at least 1".into()));
    }
    let unit = vec![1.0; ordered.dim()];
    let neighbors = (0..ordered.len())
        .into_par_iter()
        .map(|i| {
            if i <= t {
                (0..i).collect()
            } else {
                nearest(ordered, i, ordered.row(i), &unit, t)
            }
        })
        .collect();
    Ok(NeighborGraph { t, neighbors })
}

/// The `t` reference inputs nearest to `point` under the given ranges,
/// ascending by index. `t` larger than the reference set is clamped.
pub fn predict_neighbors(reference: &Inputs, point: &[f64], t: usize, ranges: &[f64]) -> Result<Vec<usize>> {
    check_dim("prediction input", reference.dim(), point.len())?;
    check_dim("prediction ranges", reference.dim(), ranges.len())?;
    if reference.is_empty() {
        return Err(Error::Data("reference set is empty".into()));
    }
    let n = reference.len();
    let t = if t > n {
        log::warn!("prediction neighbor count {t} exceeds reference size {n}; using {n}");
        n
    } else {
        t
    };
    let inv: Vec<f64> = ranges.iter().map(|r| 1.0 / r).collect();
    Ok(nearest(reference, n, point, &inv, t))
}

/// Like [`predict_neighbors`] with precomputed inverse ranges and no checks.
pub(crate) fn predict_neighbors_inv(reference: &Inputs, point: &[f64], t: usize, inv_ranges: &[f64]) -> Vec<usize> {
    nearest(reference, reference.len(), point, inv_ranges, t.min(reference.len()))
}
