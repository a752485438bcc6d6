//! Engine configuration and its flat `key = value` file format.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::CANONICAL_RATE;
use crate::features::{FeatureError, MfccConfig};
use crate::gmm;
use crate::registry::TrainConfig;
use crate::vq;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config syntax: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Feature(#[from] FeatureError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    pub mfcc: MfccConfig,
    pub vq_k: usize,
    pub gmm_m: usize,
    pub em_max_iter: usize,
    pub em_tol: f64,
    pub seed: u64,
    pub sample_rate: u32,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            mfcc: MfccConfig::default(),
            vq_k: vq::DEFAULT_K,
            gmm_m: gmm::DEFAULT_COMPONENTS,
            em_max_iter: gmm::DEFAULT_MAX_ITER,
            em_tol: gmm::DEFAULT_TOL,
            seed: 42,
            sample_rate: CANONICAL_RATE,
        }
    }
}

/// On-disk shape: every field at top level, missing keys take defaults.
#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FlatConfig {
    frame_len_ms: f64,
    hop_ms: f64,
    preemphasis: f64,
    n_fft: usize,
    n_mels: usize,
    fmin: f64,
    fmax: f64,
    n_coeffs: usize,
    vq_k: usize,
    gmm_m: usize,
    em_max_iter: usize,
    em_tol: f64,
    seed: u64,
    sample_rate: u32,
}

impl Default for FlatConfig {
    fn default() -> Self {
        EngineConfig::default().into()
    }
}

impl From<EngineConfig> for FlatConfig {
    fn from(c: EngineConfig) -> Self {
        Self {
            frame_len_ms: c.mfcc.frame_len_ms,
            hop_ms: c.mfcc.hop_ms,
            preemphasis: c.mfcc.preemphasis,
            n_fft: c.mfcc.n_fft,
            n_mels: c.mfcc.n_mels,
            fmin: c.mfcc.fmin,
            fmax: c.mfcc.fmax,
            n_coeffs: c.mfcc.n_coeffs,
            vq_k: c.vq_k,
            gmm_m: c.gmm_m,
            em_max_iter: c.em_max_iter,
            em_tol: c.em_tol,
            seed: c.seed,
            sample_rate: c.sample_rate,
        }
    }
}

impl From<FlatConfig> for EngineConfig {
    fn from(f: FlatConfig) -> Self {
        Self {
            mfcc: MfccConfig {
                frame_len_ms: f.frame_len_ms,
                hop_ms: f.hop_ms,
                preemphasis: f.preemphasis,
                n_fft: f.n_fft,
                n_mels: f.n_mels,
                fmin: f.fmin,
                fmax: f.fmax,
                n_coeffs: f.n_coeffs,
            },
            vq_k: f.vq_k,
            gmm_m: f.gmm_m,
            em_max_iter: f.em_max_iter,
            em_tol: f.em_tol,
            seed: f.seed,
            sample_rate: f.sample_rate,
        }
    }
}

impl EngineConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let flat: FlatConfig = toml::from_str(text)?;
        let cfg = EngineConfig::from(flat);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        toml::to_string(&FlatConfig::from(self.clone())).expect("flat config always serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.sample_rate == 0 {
            return Err(ConfigError::Invalid("sample_rate must be positive".into()));
        }
        self.mfcc.validate(self.sample_rate)?;
        if self.vq_k == 0 || self.gmm_m == 0 || self.em_max_iter == 0 {
            return Err(ConfigError::Invalid(
                "vq_k, gmm_m and em_max_iter must be positive".into(),
            ));
        }
        if !(self.em_tol > 0.0) {
            return Err(ConfigError::Invalid("em_tol must be positive".into()));
        }
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            k: self.vq_k,
            m: self.gmm_m,
            em_max_iter: self.em_max_iter,
            em_tol: self.em_tol,
            seed: self.seed,
            kmeans_max_iter: vq::DEFAULT_MAX_ITER,
        }
    }
}
