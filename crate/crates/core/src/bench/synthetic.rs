//! Synthetic three-band forward model whose log radiances depend on the
//! 62-d state only through a planted 4-d projection.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::rng;
use crate::subspace::StateStandardizer;

pub const STATE_DIM: usize = 62;
pub const ACTIVE_DIM: usize = 4;
pub const GEOMETRY_DIM: usize = 4;
const LINES_PER_BAND: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n_wavelengths: usize,
    /// Lag-one correlation of the state prior.
    pub state_correlation: f64,
    /// Measurement noise sd as a fraction of the reference radiance.
    pub noise_relative: f64,
    /// Whether sampled spectra include measurement noise.
    pub add_noise: bool,
    /// Fraction of radiances set missing at random.
    pub missing_fraction: f64,
    /// Standard deviation of the random-feature field added to each mode
    /// coefficient (zero disables it).
    pub field_amplitude: f64,
    pub field_features: usize,
    /// Length scale of the field in `(s, b)` units.
    pub field_length: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_wavelengths: 1016,
            state_correlation: 0.8,
            noise_relative: 0.01,
            add_noise: false,
            missing_fraction: 0.0,
            field_amplitude: 0.08,
            field_features: 150,
            field_length: 1.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Band {
    name: String,
    wavelengths: Vec<f64>,
    /// Log continuum on the grid.
    continuum: Vec<f64>,
    /// Mode shapes on the grid; log radiance is `continuum + sum_j c_j shape_j`.
    shapes: Vec<Vec<f64>>,
}

/// Random Fourier features `a sqrt(2/K) sum_k w_k cos(omega_k . u / l + phi_k)`
/// over `u = (s[dims], b)`, with Student-t(5) frequencies so the field
/// resembles a Matérn-5/2 sample path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RandomField {
    dims: Vec<usize>,
    omegas: Vec<Vec<f64>>,
    phases: Vec<f64>,
    weights: Vec<f64>,
    scale: f64,
    length: f64,
}

impl RandomField {
    fn sample<R: Rng>(dims: Vec<usize>, config: &SyntheticConfig, rng: &mut R) -> Self {
        let k = config.field_features;
        let width = dims.len() + GEOMETRY_DIM;
        let chi = ChiSquared::new(5.0).expect("positive dof");
        let omegas = (0..k)
            .map(|_| {
                let w: f64 = chi.sample(rng);
                let f = (5.0 / w).sqrt();
                (0..width).map(|_| f * rng.sample::<f64, _>(StandardNormal)).collect()
            })
            .collect();
        let phases = (0..k).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
        let weights = (0..k).map(|_| rng.sample(StandardNormal)).collect();
        let scale = if k == 0 { 0.0 } else { config.field_amplitude * (2.0 / k as f64).sqrt() };
        Self { dims, omegas, phases, weights, scale, length: config.field_length }
    }

    /// Value and gradient with respect to the active variables.
    fn eval(&self, s: &[f64], b: &[f64]) -> (f64, [f64; ACTIVE_DIM]) {
        let mut v = 0.0;
        let mut g = [0.0; ACTIVE_DIM];
        let u: Vec<f64> = self.dims.iter().map(|&d| s[d]).chain(b.iter().copied()).map(|x| x / self.length).collect();
        for ((om, ph), w) in self.omegas.iter().zip(&self.phases).zip(&self.weights) {
            let arg = om.iter().zip(&u).map(|(a, b)| a * b).sum::<f64>() + ph;
            v += w * arg.cos();
            let ds = -w * arg.sin() / self.length;
            for (k, &d) in self.dims.iter().enumerate() {
                g[d] += ds * om[k];
            }
        }
        g.iter_mut().for_each(|x| *x *= self.scale);
        (self.scale * v, g)
    }
}

/// Planted forward model with analytic Jacobians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticForward {
    config: SyntheticConfig,
    /// Orthonormal `62 x 4`.
    p_true: DMatrix<f64>,
    state_mean: Vec<f64>,
    state_scale: Vec<f64>,
    bands: Vec<Band>,
    /// One field per band and mode.
    fields: Vec<Vec<RandomField>>,
    noise_var: Vec<Vec<f64>>,
}

/// One simulator run.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticRun {
    pub state: Vec<f64>,
    pub geometry: Vec<f64>,
    /// Radiances per band, NaN where missing.
    pub radiances: Vec<Vec<f64>>,
}

fn gaussian_lines<R: Rng>(lo: f64, hi: f64, grid: &[f64], rng: &mut R) -> Vec<Vec<f64>> {
    let span = hi - lo;
    (0..LINES_PER_BAND)
        .map(|l| {
            let center = lo + span * (l as f64 + 0.5 + 0.3 * (rng.random::<f64>() - 0.5)) / LINES_PER_BAND as f64;
            let width = span / 40.0 * (0.8 + 0.4 * rng.random::<f64>());
            let weight = 0.5 + rng.random::<f64>();
            grid.iter().map(|w| weight * (-0.5 * ((w - center) / width).powi(2)).exp()).collect()
        })
        .collect()
}

fn sum_lines(lines: &[Vec<f64>], pick: impl Fn(usize) -> bool) -> Vec<f64> {
    let m = lines[0].len();
    (0..m).map(|j| lines.iter().enumerate().filter(|(l, _)| pick(*l)).map(|(_, v)| -v[j]).sum()).collect()
}

/// Mode coefficients `c_j(s, b)` per band and their derivatives in `s`.
fn coefficients(band: usize, s: &[f64], b: &[f64]) -> (Vec<f64>, Vec<[f64; ACTIVE_DIM]>) {
    let th = |v: f64| v.tanh();
    let dth = |v: f64| 1.0 - v.tanh().powi(2);
    match band {
        0 => (
            vec![
                0.15 * b[0] + 0.1 * (b[1] * b[1] - 1.0 / 3.0),
                0.6 + 0.3 * th(s[0]) + 0.1 * s[1] + 0.05 * b[2],
                0.6 + 0.25 * th(s[1]) + 0.1 * s[0].sin() + 0.05 * b[3],
            ],
            vec![
                [0.0; ACTIVE_DIM],
                [0.3 * dth(s[0]), 0.1, 0.0, 0.0],
                [0.1 * s[0].cos(), 0.25 * dth(s[1]), 0.0, 0.0],
            ],
        ),
        1 => (
            vec![0.6 + 0.3 * th(0.8 * s[2]) + 0.1 * th(s[3]) + 0.05 * b[0]],
            vec![[0.0, 0.0, 0.24 * dth(0.8 * s[2]), 0.1 * dth(s[3])]],
        ),
        _ => (
            vec![0.6 + 0.3 * th(0.8 * s[3]) - 0.1 * th(s[2]) + 0.05 * b[1]],
            vec![[0.0, 0.0, -0.1 * dth(s[2]), 0.24 * dth(0.8 * s[3])]],
        ),
    }
}

impl SyntheticForward {
    pub fn new(config: SyntheticConfig, seed: u64) -> Result<Self> {
        if config.n_wavelengths < 8 {
            return Err(Error::Config("synthetic bands need at least 8 wavelengths".into()));
        }
        if !(0.0..1.0).contains(&config.missing_fraction) {
            return Err(Error::Config(format!("missing fraction {} outside [0, 1)", config.missing_fraction)));
        }
        if !(config.state_correlation.abs() < 1.0) {
            return Err(Error::Config("state correlation must lie in (-1, 1)".into()));
        }
        let mut r = rng::stream(seed, "synthetic/model");
        let g = DMatrix::from_fn(STATE_DIM, ACTIVE_DIM, |_, _| r.sample::<f64, _>(StandardNormal));
        let p_true = g.qr().q();
        let state_mean = (0..STATE_DIM).map(|j| 1.0 + j as f64 / STATE_DIM as f64).collect();
        let state_scale = (0..STATE_DIM).map(|j| 0.1 * (1 + j % 5) as f64).collect();
        let m = config.n_wavelengths;
        let specs = [("o2", 757.0, 775.0, 4.0), ("wco2", 1594.0, 1619.0, 3.0), ("sco2", 2042.0, 2081.0, 2.0)];
        let mut bands = Vec::new();
        for (k, (name, lo, hi, level)) in specs.into_iter().enumerate() {
            let grid: Vec<f64> = (0..m).map(|j| lo + (hi - lo) * j as f64 / (m - 1) as f64).collect();
            let continuum = grid.iter().map(|w| level + 0.2 * (w - lo) / (hi - lo)).collect();
            let lines = gaussian_lines(lo, hi, &grid, &mut r);
            let shapes = if k == 0 {
                vec![vec![1.0; m], sum_lines(&lines, |l| l % 2 == 0), sum_lines(&lines, |l| l % 2 == 1)]
            } else {
                vec![sum_lines(&lines, |_| true)]
            };
            bands.push(Band { name: name.to_string(), wavelengths: grid, continuum, shapes });
        }
        let fields = vec![
            vec![
                RandomField::sample(vec![], &config, &mut r),
                RandomField::sample(vec![0, 1], &config, &mut r),
                RandomField::sample(vec![0, 1], &config, &mut r),
            ],
            vec![RandomField::sample(vec![2, 3], &config, &mut r)],
            vec![RandomField::sample(vec![2, 3], &config, &mut r)],
        ];
        let mut model = Self { config, p_true, state_mean, state_scale, bands, fields, noise_var: Vec::new() };
        let reference = model.evaluate(&model.state_mean.clone(), &[0.0; GEOMETRY_DIM])?.0;
        model.noise_var = reference
            .iter()
            .map(|y| y.iter().map(|v| (model.config.noise_relative * v).powi(2)).collect())
            .collect();
        Ok(model)
    }

    pub fn config(&self) -> &SyntheticConfig {
        &self.config
    }

    pub fn p_true(&self) -> &DMatrix<f64> {
        &self.p_true
    }

    /// Standardizer defining the planted `x~`.
    pub fn standardizer(&self) -> StateStandardizer {
        StateStandardizer::new(self.state_mean.clone(), self.state_scale.clone()).expect("positive scales")
    }

    pub fn band_names(&self) -> Vec<String> {
        self.bands.iter().map(|b| b.name.clone()).collect()
    }

    pub fn wavelengths(&self, band: usize) -> &[f64] {
        &self.bands[band].wavelengths
    }

    /// Per-band diagonal noise variances.
    pub fn noise_var(&self) -> &[Vec<f64>] {
        &self.noise_var
    }

    /// Active variables `P_true^T x~`.
    pub fn active(&self, x: &[f64]) -> Vec<f64> {
        let xt: Vec<f64> = x.iter().zip(&self.state_mean).zip(&self.state_scale).map(|((v, m), s)| (v - m) / s).collect();
        (0..ACTIVE_DIM).map(|k| self.p_true.column(k).iter().zip(&xt).map(|(p, v)| p * v).sum()).collect()
    }

    /// Noiseless radiances per band and the Jacobian `d y / d x` with band
    /// blocks stacked row-wise (`3 m x 62`).
    pub fn evaluate(&self, x: &[f64], b: &[f64]) -> Result<(Vec<Vec<f64>>, DMatrix<f64>)> {
        check_dim("synthetic state", STATE_DIM, x.len())?;
        check_dim("synthetic geometry", GEOMETRY_DIM, b.len())?;
        let s = self.active(x);
        let m = self.config.n_wavelengths;
        // d s / d x = P^T D^{-1}
        let ds_dx = DMatrix::from_fn(ACTIVE_DIM, STATE_DIM, |k, j| self.p_true[(j, k)] / self.state_scale[j]);
        let mut jac = DMatrix::zeros(self.bands.len() * m, STATE_DIM);
        let mut out = Vec::with_capacity(self.bands.len());
        for (k, band) in self.bands.iter().enumerate() {
            let (mut c, mut dc) = coefficients(k, &s, b);
            for (j, field) in self.fields[k].iter().enumerate() {
                let (v, g) = field.eval(&s, b);
                c[j] += v;
                for a in 0..ACTIVE_DIM {
                    dc[j][a] += g[a];
                }
            }
            let mut dlog_ds = DMatrix::<f64>::zeros(m, ACTIVE_DIM);
            let y: Vec<f64> = (0..m)
                .map(|w| {
                    let mut v = band.continuum[w];
                    for (j, shape) in band.shapes.iter().enumerate() {
                        v += c[j] * shape[w];
                        for a in 0..ACTIVE_DIM {
                            dlog_ds[(w, a)] += dc[j][a] * shape[w];
                        }
                    }
                    v.exp()
                })
                .collect();
            for (w, yw) in y.iter().enumerate() {
                dlog_ds.row_mut(w).scale_mut(*yw);
            }
            jac.rows_mut(k * m, m).copy_from(&(dlog_ds * &ds_dx));
            out.push(y);
        }
        Ok((out, jac))
    }

    /// Draws `n` runs: correlated Gaussian states, uniform geometry on
    /// `[-1, 1]^4`, optional noise and missingness.
    pub fn sample_runs(&self, n: usize, seed: u64) -> Result<Vec<SyntheticRun>> {
        let mut r = rng::stream(seed, "synthetic/runs");
        let rho = self.config.state_correlation;
        let innov = (1.0 - rho * rho).sqrt();
        let mut runs = Vec::with_capacity(n);
        for _ in 0..n {
            let mut e = 0.0;
            let state: Vec<f64> = (0..STATE_DIM)
                .map(|j| {
                    let xi: f64 = r.sample(StandardNormal);
                    e = if j == 0 { xi } else { rho * e + innov * xi };
                    self.state_mean[j] + self.state_scale[j] * e
                })
                .collect();
            let geometry: Vec<f64> = (0..GEOMETRY_DIM).map(|_| r.random_range(-1.0..1.0)).collect();
            let (mut radiances, _) = self.evaluate(&state, &geometry)?;
            for (y, nv) in radiances.iter_mut().zip(&self.noise_var) {
                for (v, var) in y.iter_mut().zip(nv) {
                    if self.config.add_noise {
                        *v += var.sqrt() * r.sample::<f64, _>(StandardNormal);
                    }
                    if self.config.missing_fraction > 0.0 && r.random::<f64>() < self.config.missing_fraction {
                        *v = f64::NAN;
                    }
                }
            }
            runs.push(SyntheticRun { state, geometry, radiances });
        }
        Ok(runs)
    }
}
