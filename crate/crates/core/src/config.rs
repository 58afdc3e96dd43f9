//! Run configuration for the command-line pipeline.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::sha256_hex;
use crate::error::{Error, Result};
use crate::learner::LearnConfig;
use crate::mpc::{MpcSpec, PlantSpec, SampleMode};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub n_train: usize,
    pub n_test: usize,
    /// Interval the initial states are drawn from.
    pub range: (f64, f64),
    /// Seed of the held-out test states (and of training states in
    /// `seeded-random` mode).
    pub seed: u64,
    /// Sampling of the training states.
    pub mode: SampleMode,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            n_train: 50,
            n_test: 50,
            range: (0.1, 0.9),
            seed: 7,
            mode: SampleMode::UniformGrid,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSettings {
    pub x0: f64,
    pub t_final: f64,
    pub dt_sample: f64,
}

impl Default for SimSettings {
    fn default() -> Self {
        SimSettings {
            x0: 0.75,
            t_final: 10.0,
            dt_sample: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub plant: PlantSpec,
    pub mpc: MpcSpec,
    pub learn: LearnConfig,
    pub data: DataConfig,
    pub sim: SimSettings,
}

impl Default for RunConfig {
    /// The CSTR case study. Output bounds are fixed at +-1000, the range the
    /// published leaf expressions reach on the training grid.
    fn default() -> Self {
        RunConfig {
            plant: PlantSpec::default(),
            mpc: MpcSpec::default(),
            learn: LearnConfig {
                y_bounds: Some((-1000.0, 1000.0)),
                ..LearnConfig::default()
            },
            data: DataConfig::default(),
            sim: SimSettings::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)
            .map_err(|e| Error::parse(format!("config line {} column {}", e.line(), e.column()), e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Applies `section.key=value` overrides. Values are parsed as JSON,
    /// falling back to a plain string.
    pub fn with_overrides<S: AsRef<str>>(&self, sets: &[S]) -> Result<Self> {
        let mut doc = serde_json::to_value(self).expect("config serializes");
        for s in sets {
            let s = s.as_ref();
            let (path, raw) = s
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {s:?} is not of the form key=value")))?;
            let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            let mut slot = &mut doc;
            for key in path.split('.') {
                slot = slot
                    .as_object_mut()
                    .and_then(|o| o.get_mut(key))
                    .ok_or_else(|| Error::Config(format!("unknown configuration key {path:?}")))?;
            }
            *slot = value;
        }
        let cfg: RunConfig =
            serde_json::from_value(doc).map_err(|e| Error::Config(format!("invalid override: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.mpc_spec().validate()?;
        let d = &self.data;
        let (xl, xu) = self.mpc.x_bounds;
        if d.n_train == 0 || d.n_test == 0 || !(d.range.0 < d.range.1) || d.range.0 < xl || d.range.1 > xu {
            return Err(Error::Config(format!("invalid data section: {d:?}")));
        }
        let s = &self.sim;
        if !(s.dt_sample > 0.0 && s.t_final >= s.dt_sample && s.x0 >= xl && s.x0 <= xu) {
            return Err(Error::Config(format!("invalid sim section: {s:?}")));
        }
        Ok(())
    }

    /// The MPC with this configuration's plant.
    pub fn mpc_spec(&self) -> MpcSpec {
        MpcSpec {
            plant: self.plant,
            ..self.mpc
        }
    }

    /// SHA-256 of the compact JSON encoding.
    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool_version: String,
    pub config_hash: String,
    /// Hash of the dataset the artifact was derived from, if any.
    pub dataset_hash: Option<String>,
}

impl Provenance {
    pub fn new(cfg: &RunConfig, dataset_hash: Option<String>) -> Self {
        Provenance {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: cfg.hash(),
            dataset_hash,
        }
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("provenance serializes")
    }
}
