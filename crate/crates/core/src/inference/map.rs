use super::Target;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NelderMeadOptions {
    pub max_evals: usize,
    /// Initial simplex edge.
    pub step: f64,
    /// Stop when the simplex's function spread and diameter fall below this.
    pub tol: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self { max_evals: 2000, step: 0.5, tol: 1e-10 }
    }
}

/// Minimizes `f` from `x0`; returns the best vertex, its value and the
/// number of evaluations.
pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(mut f: F, x0: &[f64], opts: &NelderMeadOptions) -> (Vec<f64>, f64, usize) {
    let d = x0.len();
    let mut evals = 0;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(d + 1);
    let f0 = eval(x0, &mut evals);
    simplex.push((x0.to_vec(), f0));
    for j in 0..d {
        let mut x = x0.to_vec();
        x[j] += opts.step;
        let v = eval(&x, &mut evals);
        simplex.push((x, v));
    }
    let lerp = |a: &[f64], b: &[f64], t: f64| a.iter().zip(b).map(|(x, y)| x + t * (y - x)).collect::<Vec<_>>();
    while evals < opts.max_evals {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let spread = simplex[d].1 - simplex[0].1;
        let diam = simplex[1..]
            .iter()
            .map(|(x, _)| x.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if spread.abs() <= opts.tol && diam <= opts.tol {
            break;
        }
        let mut centroid = vec![0.0; d];
        for (x, _) in &simplex[..d] {
            for (c, v) in centroid.iter_mut().zip(x) {
                *c += v / d as f64;
            }
        }
        let worst = simplex[d].clone();
        let xr = lerp(&centroid, &worst.0, -1.0);
        let fr = eval(&xr, &mut evals);
        if fr < simplex[0].1 {
            let xe = lerp(&centroid, &worst.0, -2.0);
            let fe = eval(&xe, &mut evals);
            simplex[d] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[d - 1].1 {
            simplex[d] = (xr, fr);
        } else {
            let (xc, fc) = if fr < worst.1 {
                let x = lerp(&centroid, &worst.0, -0.5);
                let v = eval(&x, &mut evals);
                (x, v)
            } else {
                let x = lerp(&centroid, &worst.0, 0.5);
                let v = eval(&x, &mut evals);
                (x, v)
            };
            if fc < fr.min(worst.1) {
                simplex[d] = (xc, fc);
            } else {
                let best = simplex[0].0.clone();
                for v in simplex.iter_mut().skip(1) {
                    v.0 = lerp(&best, &v.0, 0.5);
                    v.1 = eval(&v.0, &mut evals);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, v) = simplex.swap_remove(0);
    (x, v, evals)
}

#[derive(Debug, Clone)]
pub struct MapResult<S> {
    pub params: Vec<f64>,
    pub log_post: f64,
    pub summary: S,
    /// False when no point better than the start was found.
    pub improved: bool,
    pub evaluations: usize,
}

/// Maximizes the target over log-parameters with Nelder–Mead.
pub fn map_estimate<T: Target>(target: &mut T, start: &[f64], opts: &NelderMeadOptions) -> Result<MapResult<T::Summary>> {
    if start.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(Error::InvalidParameter("MAP start must be positive and finite".into()));
    }
    let (lp0, s0) = target.evaluate(start)?;
    let log0: Vec<f64> = start.iter().map(|v| v.ln()).collect();
    let (best, _, evals) = nelder_mead(
        |u| {
            let p: Vec<f64> = u.iter().map(|v| v.exp()).collect();
            match target.evaluate(&p) {
                Ok((lp, _)) if lp.is_finite() => -lp,
                _ => f64::INFINITY,
            }
        },
        &log0,
        opts,
    );
    let params: Vec<f64> = best.iter().map(|v| v.exp()).collect();
    let (lp, s) = target.evaluate(&params)?;
    if lp > lp0 {
        Ok(MapResult { params, log_post: lp, summary: s, improved: true, evaluations: evals + 2 })
    } else {
        Ok(MapResult { params: start.to_vec(), log_post: lp0, summary: s0, improved: false, evaluations: evals + 2 })
    }
}
