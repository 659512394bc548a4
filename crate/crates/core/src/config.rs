//! Versioned JSON configuration for the model, its update loop, and the toy trainer.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Wavelet decomposition, separate high/low extractors, HPU updates.
    Wavelet,
    /// Context encoder on the raw image and ConvGRU updates, no wavelets.
    GruBaseline,
}

/// How the high-frequency attention pools its input before the 7×7 conv.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HsaPooling {
    /// Max/mean over channels, giving an `N×1×H×W` spatial map.
    Channel,
    /// Max/mean over space, giving one gate per sample.
    Spatial,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Upsample {
    Bilinear,
    /// Reserved; rejected by [`ModelConfig::validate`].
    Convex,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Channels {
    /// Output channels of the shared matching encoder.
    pub matching: usize,
    /// Hidden-state channels; also the width of the low- and high-frequency features.
    pub hidden: usize,
    pub motion_corr: usize,
    pub motion_disp: usize,
    pub decoder: usize,
}

impl Default for Channels {
    fn default() -> Self {
        Channels {
            matching: 64,
            hidden: 32,
            motion_corr: 16,
            motion_disp: 8,
            decoder: 32,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    /// Decays linearly from `learning_rate` at step 0 to zero after the last step.
    Linear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub schedule: LrSchedule,
    pub momentum: f64,
    pub gamma: f64,
    /// Elementwise gradient clip bound.
    pub clip: f64,
}

impl TrainConfig {
    /// Step size used at `step`.
    pub fn lr_at(&self, step: usize) -> f64 {
        match self.schedule {
            LrSchedule::Constant => self.learning_rate,
            LrSchedule::Linear => self.learning_rate * (1.0 - step as f64 / self.steps.max(1) as f64),
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 500,
            learning_rate: 0.01,
            schedule: LrSchedule::Constant,
            momentum: 0.0,
            gamma: 0.9,
            clip: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub version: u32,
    pub variant: Variant,
    pub seed: u64,
    /// Number of wavelet levels whose detail bands feed the high-frequency extractor.
    pub n_i: usize,
    /// Rounds of the frequency adapter per update.
    pub n_j: usize,
    pub n_k_train: usize,
    pub n_k_eval: usize,
    pub lookup_radius: usize,
    pub pyramid_levels: usize,
    pub hsa_pooling: HsaPooling,
    pub upsample: Upsample,
    pub channels: Channels,
    pub train: TrainConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            version: CONFIG_VERSION,
            variant: Variant::Wavelet,
            seed: 17,
            n_i: 3,
            n_j: 4,
            n_k_train: 8,
            n_k_eval: 16,
            lookup_radius: 4,
            pyramid_levels: 4,
            hsa_pooling: HsaPooling::Channel,
            upsample: Upsample::Bilinear,
            channels: Channels::default(),
            train: TrainConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.version != CONFIG_VERSION {
            return bad(format!("unsupported config version {}", self.version));
        }
        if !(1..=3).contains(&self.n_i) {
            return bad(format!("n_i must be in 1..=3, got {}", self.n_i));
        }
        if self.n_j < 1 {
            return bad("n_j must be at least 1".into());
        }
        if self.n_k_train < 1 || self.n_k_eval < 1 {
            return bad("iteration counts must be at least 1".into());
        }
        if self.pyramid_levels < 1 {
            return bad("pyramid_levels must be at least 1".into());
        }
        if self.upsample == Upsample::Convex {
            return bad("convex upsampling is reserved and not implemented".into());
        }
        let c = &self.channels;
        if [c.matching, c.hidden, c.motion_corr, c.motion_disp, c.decoder].contains(&0) {
            return bad("channel counts must be positive".into());
        }
        if !(self.train.gamma > 0.0 && self.train.gamma <= 1.0) {
            return bad(format!("gamma must be in (0, 1], got {}", self.train.gamma));
        }
        if !(self.train.clip > 0.0) {
            return bad("clip must be positive".into());
        }
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: ModelConfig = serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the canonical JSON serialization, hex encoded.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&bytes)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}
