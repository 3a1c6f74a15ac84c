//! Run-level data and the on-disk CSV layout.
//!
//! * `design.csv`: `run_id,x_1..x_m,b_1..b_k`
//! * `spectra_<band>.csv`: header `run_id,<wavelength>...`, one run per row,
//!   empty cells for missing radiances
//! * `noise.csv`: `band,wavelength,variance`
//! * `jacobians/jac_<run_id>.csv`: header `x_1..x_m`, one row per wavelength
//!   with bands stacked in band order

use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::RngCore;

use super::config::PipelineConfig;
use crate::bench::SyntheticForward;
use crate::error::{check_dim, Error, Result};
use crate::fda::SpectralCurveSet;
use crate::rng;

/// Per-run Jacobians `dF/dx` of all bands stacked row-wise.
pub trait JacobianSource: Send + Sync {
    fn available(&self, run: usize) -> bool;
    fn jacobian(&self, run: usize) -> Result<DMatrix<f64>>;
}

/// Jacobians recomputed from the synthetic model.
pub struct SyntheticJacobians {
    pub model: Arc<SyntheticForward>,
    pub states: Vec<Vec<f64>>,
    pub geometry: Vec<Vec<f64>>,
}

impl JacobianSource for SyntheticJacobians {
    fn available(&self, run: usize) -> bool {
        run < self.states.len()
    }

    fn jacobian(&self, run: usize) -> Result<DMatrix<f64>> {
        Ok(self.model.evaluate(&self.states[run], &self.geometry[run])?.1)
    }
}

/// Jacobians read lazily from `jac_<run_id>.csv` files.
pub struct FileJacobians {
    pub dir: PathBuf,
    pub run_ids: Vec<String>,
    pub state_dim: usize,
    pub rows: usize,
}

impl FileJacobians {
    fn path(&self, run: usize) -> PathBuf {
        self.dir.join(format!("jac_{}.csv", self.run_ids[run]))
    }
}

impl JacobianSource for FileJacobians {
    fn available(&self, run: usize) -> bool {
        self.path(run).is_file()
    }

    fn jacobian(&self, run: usize) -> Result<DMatrix<f64>> {
        let path = self.path(run);
        let (header, rows) = read_numeric_csv(&path, 0)?;
        if header.len() != self.state_dim {
            return Err(Error::format(&path, format!("expected {} columns, found {}", self.state_dim, header.len())));
        }
        if rows.len() != self.rows {
            return Err(Error::format(&path, format!("expected {} rows, found {}", self.rows, rows.len())));
        }
        Ok(DMatrix::from_fn(self.rows, self.state_dim, |i, j| rows[i].1[j]))
    }
}

/// Simulator runs with their spectra, noise and Jacobians.
#[derive(Clone)]
pub struct Dataset {
    pub run_ids: Vec<String>,
    pub states: Vec<Vec<f64>>,
    pub geometry: Vec<Vec<f64>>,
    /// One curve set per band, rows aligned with `run_ids`.
    pub spectra: Vec<SpectralCurveSet>,
    /// Per-band diagonal noise variances.
    pub noise_var: Vec<Vec<f64>>,
    pub jacobians: Option<Arc<dyn JacobianSource>>,
}

impl std::fmt::Debug for Dataset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Dataset")
            .field("runs", &self.run_ids.len())
            .field("bands", &self.spectra.iter().map(|s| s.band.as_str()).collect::<Vec<_>>())
            .finish()
    }
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.run_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.run_ids.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.states.first().map_or(0, Vec::len)
    }

    /// Runs drawn from the synthetic model, with ids `0..n`.
    pub fn synthetic(model: Arc<SyntheticForward>, n: usize, seed: u64) -> Result<Self> {
        let runs = model.sample_runs(n, seed)?;
        let names = model.band_names();
        let mut spectra = Vec::with_capacity(names.len());
        for (b, name) in names.iter().enumerate() {
            let values: Vec<f64> = runs.iter().flat_map(|r| r.radiances[b].iter().copied()).collect();
            spectra.push(SpectralCurveSet::new(name.clone(), model.wavelengths(b).to_vec(), values, true)?);
        }
        let states: Vec<Vec<f64>> = runs.iter().map(|r| r.state.clone()).collect();
        let geometry: Vec<Vec<f64>> = runs.iter().map(|r| r.geometry.clone()).collect();
        let jac = SyntheticJacobians { model: Arc::clone(&model), states: states.clone(), geometry: geometry.clone() };
        Ok(Self {
            run_ids: (0..n).map(|i| i.to_string()).collect(),
            states,
            geometry,
            spectra,
            noise_var: model.noise_var().to_vec(),
            jacobians: Some(Arc::new(jac)),
        })
    }

    /// Dataset of `cfg.synth.runs` runs from the synthetic model, seeded from
    /// the `synth/model` and `synth/runs` streams of `cfg.seed`.
    pub fn synthesize(cfg: &PipelineConfig) -> Result<Self> {
        let model_seed = rng::stream(cfg.seed, "synth/model").next_u64();
        let run_seed = rng::stream(cfg.seed, "synth/runs").next_u64();
        let model = Arc::new(SyntheticForward::new(cfg.synth.model.clone(), model_seed)?);
        Self::synthetic(model, cfg.synth.runs, run_seed)
    }

    /// Checks that every per-run table has one row per run.
    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        check_dim("geometry rows", n, self.geometry.len())?;
        check_dim("state rows", n, self.states.len())?;
        check_dim("noise bands", self.spectra.len(), self.noise_var.len())?;
        for (s, nv) in self.spectra.iter().zip(&self.noise_var) {
            if s.n_curves() != n {
                return Err(Error::Data(format!("band {} has {} spectra for {n} runs", s.band, s.n_curves())));
            }
            check_dim("noise wavelengths", s.n_wavelengths(), nv.len())?;
        }
        Ok(())
    }

    /// Reads the documented layout from `dir`.
    pub fn load(dir: &Path, bands: &[String]) -> Result<Self> {
        let (run_ids, states, geometry) = read_design(&dir.join("design.csv"))?;
        let n_x = states.first().map_or(0, Vec::len);
        let mut spectra = Vec::with_capacity(bands.len());
        for band in bands {
            let path = dir.join(format!("spectra_{band}.csv"));
            let (wl, rows) = read_numeric_csv(&path, 1)?;
            let wavelengths = wl
                .iter()
                .map(|w| w.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::format(&path, format!("wavelength header: {e}")))?;
            let ids: Vec<&String> = rows.iter().map(|(id, _)| id).collect();
            if ids.len() != run_ids.len() || ids.iter().zip(&run_ids).any(|(a, b)| *a != b) {
                return Err(Error::format(&path, "run ids do not match design.csv"));
            }
            let values = rows.into_iter().flat_map(|(_, v)| v).collect();
            spectra.push(SpectralCurveSet::new(band.clone(), wavelengths, values, true).map_err(|e| Error::format(&path, e.to_string()))?);
        }
        let noise_path = dir.join("noise.csv");
        let noise_var = read_noise(&noise_path, &spectra)?;
        let rows_total = spectra.iter().map(|s| s.n_wavelengths()).sum();
        let jac_dir = dir.join("jacobians");
        let jacobians: Option<Arc<dyn JacobianSource>> = if jac_dir.is_dir() {
            Some(Arc::new(FileJacobians { dir: jac_dir, run_ids: run_ids.clone(), state_dim: n_x, rows: rows_total }))
        } else {
            None
        };
        let ds = Self { run_ids, states, geometry, spectra, noise_var, jacobians };
        ds.validate()?;
        Ok(ds)
    }

    /// Writes the documented layout to `dir`; Jacobians for the first
    /// `jacobian_runs` runs. Returns the written paths.
    pub fn write(&self, dir: &Path, jacobian_runs: usize) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut written = Vec::new();
        let design = dir.join("design.csv");
        let mut header = vec!["run_id".to_string()];
        header.extend((1..=self.state_dim()).map(|j| format!("x_{j}")));
        header.extend((1..=self.geometry.first().map_or(0, Vec::len)).map(|j| format!("b_{j}")));
        let rows = self.run_ids.iter().zip(&self.states).zip(&self.geometry).map(|((id, x), b)| {
            std::iter::once(id.clone()).chain(x.iter().chain(b).map(fmt_value)).collect::<Vec<_>>()
        });
        write_csv(&design, &header, rows)?;
        written.push(design);
        for s in &self.spectra {
            let path = dir.join(format!("spectra_{}.csv", s.band));
            let header: Vec<String> = std::iter::once("run_id".to_string()).chain(s.wavelengths.iter().map(fmt_value)).collect();
            let rows = self
                .run_ids
                .iter()
                .enumerate()
                .map(|(i, id)| std::iter::once(id.clone()).chain(s.curve(i).iter().map(fmt_value)).collect::<Vec<_>>());
            write_csv(&path, &header, rows)?;
            written.push(path);
        }
        let noise = dir.join("noise.csv");
        let rows = self.spectra.iter().zip(&self.noise_var).flat_map(|(s, nv)| {
            s.wavelengths.iter().zip(nv).map(move |(w, v)| vec![s.band.clone(), fmt_value(w), fmt_value(v)])
        });
        write_csv(&noise, &["band".into(), "wavelength".into(), "variance".into()], rows)?;
        written.push(noise);
        if jacobian_runs > 0 {
            let src = self.jacobians.as_ref().ok_or_else(|| Error::Data("dataset has no Jacobians to write".into()))?;
            let jdir = dir.join("jacobians");
            std::fs::create_dir_all(&jdir).map_err(|e| Error::io(&jdir, e))?;
            let header: Vec<String> = (1..=self.state_dim()).map(|j| format!("x_{j}")).collect();
            for run in 0..jacobian_runs.min(self.len()) {
                let k = src.jacobian(run)?;
                let path = jdir.join(format!("jac_{}.csv", self.run_ids[run]));
                let rows = k.row_iter().map(|r| r.iter().map(fmt_value).collect::<Vec<_>>());
                write_csv(&path, &header, rows)?;
                written.push(path);
            }
        }
        Ok(written)
    }

    /// Subset of runs in the given order.
    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            run_ids: idx.iter().map(|&i| self.run_ids[i].clone()).collect(),
            states: idx.iter().map(|&i| self.states[i].clone()).collect(),
            geometry: idx.iter().map(|&i| self.geometry[i].clone()).collect(),
            spectra: self.spectra.iter().map(|s| s.select(idx)).collect(),
            noise_var: self.noise_var.clone(),
            jacobians: None,
        }
    }
}

/// Reads `design.csv`: run ids, states and geometry.
pub fn read_design(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let (header, rows) = read_numeric_csv(path, 1)?;
    let n_x = header.iter().take_while(|h| h.starts_with("x_")).count();
    let n_b = header.iter().skip(n_x).filter(|h| h.starts_with("b_")).count();
    if n_x + n_b != header.len() || n_x == 0 {
        return Err(Error::format(path, "columns must be x_1..x_m followed by b_1..b_k"));
    }
    if let Some((id, _)) = rows.iter().find(|(_, v)| v.iter().any(|x| !x.is_finite())) {
        return Err(Error::format(path, format!("run {id} has a missing or non-finite input")));
    }
    let ids = rows.iter().map(|(id, _)| id.clone()).collect();
    let states = rows.iter().map(|(_, v)| v[..n_x].to_vec()).collect();
    let geometry = rows.iter().map(|(_, v)| v[n_x..].to_vec()).collect();
    Ok((ids, states, geometry))
}

fn fmt_value(v: &f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        v.to_string()
    }
}

pub(crate) fn write_csv<I>(path: &Path, header: &[String], rows: I) -> Result<()>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let err = |e: csv::Error| Error::format(path, e.to_string());
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(&r).map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a CSV whose first `id_cols` (0 or 1) columns are a run id and the
/// rest numbers; empty cells become `NaN`. Returns the numeric header names
/// and `(id, values)` rows.
pub(crate) fn read_numeric_csv(path: &Path, id_cols: usize) -> Result<(Vec<String>, Vec<(String, Vec<f64>)>)> {
    let mut r = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        k => Error::format(path, format!("{k:?}")),
    })?;
    let header: Vec<String> =
        r.headers().map_err(|e| Error::format(path, e.to_string()))?.iter().skip(id_cols).map(str::to_string).collect();
    let mut rows = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::format(path, e.to_string()))?;
        let id = if id_cols == 1 { rec.get(0).unwrap_or_default().to_string() } else { String::new() };
        let vals = rec
            .iter()
            .skip(id_cols)
            .map(|s| if s.trim().is_empty() { Ok(f64::NAN) } else { s.trim().parse::<f64>() })
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::format(path, format!("row {}: {e}", line + 2)))?;
        if vals.len() != header.len() {
            return Err(Error::format(path, format!("row {} has {} values, header has {}", line + 2, vals.len(), header.len())));
        }
        rows.push((id, vals));
    }
    Ok((header, rows))
}

fn read_noise(path: &Path, spectra: &[SpectralCurveSet]) -> Result<Vec<Vec<f64>>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let mut out: Vec<Vec<f64>> = spectra.iter().map(|_| Vec::new()).collect();
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::format(path, e.to_string()))?;
        let band = rec.get(0).unwrap_or_default();
        let b = spectra
            .iter()
            .position(|s| s.band == band)
            .ok_or_else(|| Error::format(path, format!("unknown band `{band}`")))?;
        let v: f64 = rec
            .get(2)
            .unwrap_or_default()
            .parse()
            .map_err(|e| Error::format(path, format!("variance: {e}")))?;
        out[b].push(v);
    }
    for (s, nv) in spectra.iter().zip(&out) {
        if nv.len() != s.n_wavelengths() {
            return Err(Error::format(path, format!("band {} has {} variances for {} wavelengths", s.band, nv.len(), s.n_wavelengths())));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::SyntheticConfig;

    #[test]
    fn write_then_load_round_trips() {
        let model = Arc::new(
            SyntheticForward::new(SyntheticConfig { n_wavelengths: 30, missing_fraction: 0.1, ..Default::default() }, 4).unwrap(),
        );
        let ds = Dataset::synthetic(Arc::clone(&model), 6, 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let files = ds.write(dir.path(), 3).unwrap();
        assert_eq!(files.len(), 1 + 3 + 1 + 3);
        let back = Dataset::load(dir.path(), &model.band_names()).unwrap();
        assert_eq!(back.run_ids, ds.run_ids);
        assert_eq!(back.states, ds.states);
        assert_eq!(back.geometry, ds.geometry);
        assert_eq!(back.noise_var, ds.noise_var);
        for (a, b) in back.spectra.iter().zip(&ds.spectra) {
            assert_eq!(a.wavelengths, b.wavelengths);
            for i in 0..6 {
                for (x, y) in a.curve(i).iter().zip(b.curve(i)) {
                    assert!(x == y || (x.is_nan() && y.is_nan()));
                }
            }
        }
        let jb = back.jacobians.unwrap();
        assert!(jb.available(2) && !jb.available(3));
        assert_eq!(jb.jacobian(1).unwrap(), ds.jacobians.unwrap().jacobian(1).unwrap());
    }

    #[test]
    fn mismatched_rows_are_rejected() {
        let model = Arc::new(SyntheticForward::new(SyntheticConfig { n_wavelengths: 20, ..Default::default() }, 4).unwrap());
        let ds = Dataset::synthetic(Arc::clone(&model), 4, 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        ds.write(dir.path(), 0).unwrap();
        let path = dir.path().join("spectra_wco2.csv");
        let text = std::fs::read_to_string(&path).unwrap();
        let trimmed: Vec<&str> = text.lines().take(4).collect();
        std::fs::write(&path, trimmed.join("\n") + "\n").unwrap();
        let err = Dataset::load(dir.path(), &model.band_names()).unwrap_err();
        assert_eq!(err.kind(), crate::ErrorKind::Data);
    }
}
