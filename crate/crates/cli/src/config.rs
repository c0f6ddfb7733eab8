//! The run configuration file: JSON with every key optional.

use std::fs;
use std::path::{Path, PathBuf};

use aftn::data::SynthConfig;
use aftn::network::{FenConfig, HeadConfig, Variant};
use aftn::numerics::OptimConfig;
use aftn::trackeval::TrainConfig;
use aftn::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub train_manifest: Option<PathBuf>,
    pub eval_manifest: Option<PathBuf>,
    /// Sequence count for `gen`.
    pub sequences: usize,
    pub synth: SynthConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train_manifest: None,
            eval_manifest: None,
            sequences: 40,
            synth: SynthConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Spacing of the overlap and reinitialization threshold grids.
    pub grid_step: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { grid_step: 0.01 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub variant: Variant,
    pub fen: FenConfig,
    pub head: HeadConfig,
    pub optim: OptimConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Aftn,
            fen: FenConfig::default(),
            head: HeadConfig::default(),
            optim: OptimConfig::default(),
            train: TrainConfig::default(),
            data: DataConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path).map_err(|e| Error::Io {
            context: format!("reading {}", path.display()),
            source: e,
        })?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    /// Write the effective configuration to `path`.
    pub fn echo(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| Error::Io {
            context: format!("writing {}", path.display()),
            source: e,
        })
    }
}
