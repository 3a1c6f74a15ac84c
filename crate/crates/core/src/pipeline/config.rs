use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::bench::SyntheticConfig;
use crate::emulator::SoundingConfig;
use crate::emulator::Trend;
use crate::error::{Error, Result};
use crate::fda::FpcaConfig;
use crate::inference::{ChainConfig, NelderMeadOptions};
use crate::kernels::Family;
use crate::nngp::Ordering;
use crate::subspace::Selection;

/// How hyperparameters are estimated for each emulator group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimation {
    /// Mixture over retained MCMC draws.
    #[default]
    Mcmc,
    /// Single plug-in posterior mode.
    Map,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSettings {
    /// Runs generated by `synth`.
    pub runs: usize,
    /// Leading runs whose Jacobians are written; all runs when absent.
    pub jacobians: Option<usize>,
    pub model: SyntheticConfig,
}

impl Default for SynthSettings {
    fn default() -> Self {
        Self { runs: 2200, jacobians: Some(1000), model: SyntheticConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SubspaceSettings {
    pub selection: Selection,
    /// Training runs whose misfit gradients form the sensitivity matrix.
    pub samples: usize,
}

impl Default for SubspaceSettings {
    fn default() -> Self {
        Self { selection: Selection::Gap, samples: 1000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmulatorSettings {
    pub kernel: Family,
    pub trend: Trend,
    /// Neighbor count for both the likelihood and prediction.
    pub neighbors: usize,
    pub ordering: Ordering,
    /// Bands whose components share one separable emulator.
    pub sep_bands: Vec<usize>,
    pub initial_nugget: f64,
    pub estimation: Estimation,
    /// Nelder–Mead budget when `estimation` is `map`.
    pub map_evaluations: usize,
}

impl Default for EmulatorSettings {
    fn default() -> Self {
        Self {
            kernel: Family::default(),
            trend: Trend::Constant,
            neighbors: 20,
            ordering: Ordering::default(),
            sep_bands: vec![1, 2],
            initial_nugget: 1e-2,
            estimation: Estimation::Mcmc,
            map_evaluations: NelderMeadOptions::default().max_evals,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Directory holding `design.csv`, `spectra_<band>.csv`, `noise.csv` and
    /// `jacobians/`.
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub bands: Vec<String>,
    /// Runs withheld from training for validation.
    pub holdout: usize,
    /// Design file for `predict`; the held-out runs when absent.
    pub predict_design: Option<PathBuf>,
    pub synth: SynthSettings,
    pub fpca: FpcaConfig,
    pub subspace: SubspaceSettings,
    pub emulator: EmulatorSettings,
    pub mcmc: ChainConfig,
    pub prediction: SoundingConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("out"),
            bands: vec!["o2".into(), "wco2".into(), "sco2".into()],
            holdout: 200,
            predict_design: None,
            synth: SynthSettings::default(),
            fpca: FpcaConfig::default(),
            subspace: SubspaceSettings::default(),
            emulator: EmulatorSettings::default(),
            mcmc: ChainConfig::default(),
            prediction: SoundingConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// Reads a JSON config and applies `key.path=value` overrides in order.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut value = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => serde_json::to_value(Self::default()).expect("default config serializes"),
        };
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let cfg: Self = serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.bands.is_empty() {
            return Err(Error::Config("at least one band is required".into()));
        }
        if let Some(&b) = self.emulator.sep_bands.iter().find(|&&b| b >= self.bands.len()) {
            return Err(Error::Config(format!("sep_bands entry {b} exceeds band count {}", self.bands.len())));
        }
        if self.emulator.neighbors == 0 {
            return Err(Error::Config("emulator.neighbors must be positive".into()));
        }
        if !(self.emulator.initial_nugget > 0.0) {
            return Err(Error::Config("emulator.initial_nugget must be positive".into()));
        }
        if self.subspace.samples == 0 {
            return Err(Error::Config("subspace.samples must be positive".into()));
        }
        if self.prediction.draws < 2 {
            return Err(Error::Config("prediction.draws must be at least 2".into()));
        }
        self.emulator.kernel.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.mcmc.validate()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Sets the dotted `key` in a JSON object. The value is parsed as JSON and
/// falls back to a plain string.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("override `{key}`: `{}` is not an object", parts[..i].join("."))))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    Err(Error::Config("empty override key".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = PipelineConfig::default();
        let back: PipelineConfig = serde_json::from_str(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn overrides_nested_values() {
        let cfg = PipelineConfig::load(
            None,
            &["mcmc.iterations=100".into(), "mcmc.burn_in=10".into(), "mcmc.retained=50".into(), "out_dir=elsewhere".into(), "emulator.kernel={\"family\":\"power_exponential\",\"alpha\":1.5}".into()],
        )
        .unwrap();
        assert_eq!(cfg.mcmc.iterations, 100);
        assert_eq!(cfg.out_dir, PathBuf::from("elsewhere"));
        assert_eq!(cfg.emulator.kernel, Family::PowerExponential { alpha: 1.5 });
    }

    #[test]
    fn rejects_bad_overrides() {
        assert!(PipelineConfig::load(None, &["nonsense".into()]).is_err());
        assert!(PipelineConfig::load(None, &["no_such_key=1".into()]).is_err());
        assert!(PipelineConfig::load(None, &["seed.inner=1".into()]).is_err());
        assert!(PipelineConfig::load(None, &["mcmc.retained=4000".into()]).is_err());
    }
}
