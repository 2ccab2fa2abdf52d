//! JSON run configuration for `cadgl train` and `cadgl ablate`.

use std::path::{Path, PathBuf};

use cadgl_core::synth::SynthParams;
use cadgl_core::trainer::TrainConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {detail}")]
    Read { path: PathBuf, detail: String },
    #[error("{path}: {detail}")]
    Parse { path: PathBuf, detail: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    #[serde(default)]
    pub train: TrainConfig,
    pub data: DataConfig,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
}

/// Either a pair of TSV tables or synthetic-generator parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(default)]
    pub edges: Option<PathBuf>,
    #[serde(default)]
    pub features: Option<PathBuf>,
    /// Zero-fill drugs that have no feature row instead of failing.
    #[serde(default)]
    pub allow_missing: bool,
    #[serde(default)]
    pub synthetic: Option<SynthParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    #[serde(default = "default_ratios")]
    pub ratios: [f64; 3],
    #[serde(default)]
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            ratios: default_ratios(),
            seed: 0,
        }
    }
}

fn default_ratios() -> [f64; 3] {
    [0.6, 0.2, 0.2]
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

pub enum DataSource<'a> {
    Files { edges: &'a Path, features: &'a Path },
    Synthetic(&'a SynthParams),
}

impl RunConfigFile {
    pub fn parse(text: &str, path: &Path) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(|e| ConfigError::Parse {
            path: path.to_owned(),
            detail: e.to_string(),
        })
    }

    /// Reads, resolves relative paths against the file's directory and
    /// validates.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.to_owned(),
            detail: e.to_string(),
        })?;
        let mut cfg = Self::parse(&text, path)?;
        let base = path
            .canonicalize()
            .ok()
            .and_then(|p| p.parent().map(Path::to_path_buf))
            .unwrap_or_default();
        cfg.resolve(&base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.out_dir);
        if let Some(p) = self.data.edges.as_mut() {
            fix(p);
        }
        if let Some(p) = self.data.features.as_mut() {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.train.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.source()?;
        if let Some(p) = &self.data.synthetic {
            p.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        let [a, b, c] = self.split.ratios;
        if [a, b, c].iter().any(|r| !(*r > 0.0)) || (a + b + c - 1.0).abs() > 1e-9 {
            return Err(ConfigError::Invalid(format!(
                "split ratios {:?} must be positive and sum to 1",
                self.split.ratios
            )));
        }
        Ok(())
    }

    pub fn source(&self) -> Result<DataSource<'_>, ConfigError> {
        match (&self.data.edges, &self.data.features, &self.data.synthetic) {
            (Some(edges), Some(features), None) => Ok(DataSource::Files { edges, features }),
            (None, None, Some(p)) => Ok(DataSource::Synthetic(p)),
            (None, None, None) => Err(ConfigError::Invalid("data needs edges+features or synthetic".into())),
            (Some(_), None, None) | (None, Some(_), None) => {
                Err(ConfigError::Invalid("data.edges and data.features go together".into()))
            }
            _ => Err(ConfigError::Invalid("data takes files or synthetic, not both".into())),
        }
    }
}
