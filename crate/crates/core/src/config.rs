//! Experiment configuration, read from TOML. Unknown keys are rejected.
//!
//! ```toml
//! seed = 7
//! include_chords = true
//! # corpus_dir = "tokens/"   # token CSVs; the synthetic corpus when absent
//!
//! [vocab]
//! max_beats = 256
//!
//! [train]
//! lr = 0.01
//! batch = 8
//! loss_convention = "rsgan_standard"
//!
//! [train.generator]
//! layers = 2
//! model_dim = 64
//! heads = 2
//! max_len = 128
//!
//! [train.critic]
//! kind = "transformer"
//!
//! [metrics]
//! k_seconds = 15.0
//! scales = "major_harmonic_minor"
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::gan::TrainConfig;
use crate::metrics::{ScaleSet, DEFAULT_K_SECONDS};
use crate::token::{Vocabulary, DEFAULT_DURATIONS, MAX_BEATS};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VocabConfig {
    pub max_beats: u32,
    pub durations: Vec<u32>,
}

impl Default for VocabConfig {
    fn default() -> Self {
        Self { max_beats: MAX_BEATS, durations: DEFAULT_DURATIONS.to_vec() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    pub k_seconds: f64,
    pub scales: ScaleSet,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self { k_seconds: DEFAULT_K_SECONDS, scales: ScaleSet::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub seed: u64,
    pub include_chords: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corpus_dir: Option<PathBuf>,
    pub vocab: VocabConfig,
    pub train: TrainConfig,
    pub metrics: MetricsConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 0,
            include_chords: true,
            corpus_dir: None,
            vocab: VocabConfig::default(),
            train: TrainConfig::default(),
            metrics: MetricsConfig::default(),
        }
    }
}

impl Config {
    /// Parses and validates. Generator field widths follow the vocabulary
    /// unless given explicitly, in which case they must agree with it.
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let raw: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        let explicit_sizes = raw
            .get("train")
            .and_then(|t| t.get("generator"))
            .and_then(|g| g.get("field_vocab_sizes"))
            .is_some();
        let mut cfg: Config = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.check_vocab()?;
        let sizes = cfg.vocabulary().field_sizes();
        if !explicit_sizes {
            cfg.train.generator.field_vocab_sizes = sizes;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    fn check_vocab(&self) -> Result<(), ConfigError> {
        let v = &self.vocab;
        if v.max_beats == 0 || v.max_beats > MAX_BEATS {
            return Err(ConfigError::Invalid(format!("vocab.max_beats must be in 1..={MAX_BEATS}")));
        }
        if v.durations.is_empty() || v.durations[0] == 0 || !v.durations.windows(2).all(|w| w[0] < w[1]) {
            return Err(ConfigError::Invalid("vocab.durations must be positive and increasing".into()));
        }
        Ok(())
    }

    pub fn vocabulary(&self) -> Vocabulary {
        Vocabulary::new(self.vocab.max_beats, self.vocab.durations.clone())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.check_vocab()?;
        self.train.validate().map_err(ConfigError::Invalid)?;
        let sizes = self.vocabulary().field_sizes();
        if self.train.generator.field_vocab_sizes != sizes {
            return Err(ConfigError::Invalid(format!(
                "train.generator.field_vocab_sizes {:?} disagree with the vocabulary {:?}",
                self.train.generator.field_vocab_sizes, sizes
            )));
        }
        if !(self.metrics.k_seconds.is_finite() && self.metrics.k_seconds > 0.0) {
            return Err(ConfigError::Invalid("metrics.k_seconds must be > 0".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
const DOC_EXAMPLE: &str = r#"
seed = 7
include_chords = true

[vocab]
max_beats = 256

[train]
lr = 0.01
batch = 8
loss_convention = "rsgan_standard"

[train.generator]
layers = 2
model_dim = 64
heads = 2
max_len = 128

[train.critic]
kind = "transformer"

[metrics]
k_seconds = 15.0
scales = "major_harmonic_minor"
"#;
