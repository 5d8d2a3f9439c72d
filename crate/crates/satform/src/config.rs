//! Flat key-value run configuration.
//!
//! One JSON object, no nesting: every knob of the pipeline appears as a
//! top-level key with a default, and unknown keys are rejected so typos fail
//! loudly. Precedence is command line > config file > defaults; the resolved
//! result is echoed into the run directory for provenance.

use satform_core::loss::LossWeights;
use satform_core::nn::{EncoderConfig, SeqModelConfig};
use satform_core::pipeline::TrainConfig;
use satform_core::search::{BeamConfig, BfgsConfig};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::fs;
use std::io;
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub task: Option<String>,
    pub n_samples: usize,
    pub scene_side: usize,
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
    pub lr: f64,
    pub lambda_con: f64,
    pub lambda_mse: f64,
    pub lambda_ce: f64,
    pub lambda_phy: f64,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub stages: usize,
    pub blocks_per_stage: usize,
    pub window: usize,
    pub heads: usize,
    pub d_img: usize,
    pub per_band_encoders: bool,
    pub seq_layers: usize,
    pub seq_heads: usize,
    pub hidden: usize,
    pub max_len: usize,
    pub beam_width: usize,
    pub bfgs_max_iters: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        RunConfig {
            seed: t.seed,
            task: None,
            n_samples: t.n_samples,
            scene_side: t.scene_side,
            stage1_epochs: t.stage1_epochs,
            stage2_epochs: t.stage2_epochs,
            lr: t.lr,
            lambda_con: t.weights.lambda_con,
            lambda_mse: t.weights.lambda_mse,
            lambda_ce: t.weights.lambda_ce,
            lambda_phy: t.weights.lambda_phy,
            patch_size: t.enc.patch_size,
            embed_dim: t.enc.embed_dim,
            stages: t.enc.stages,
            blocks_per_stage: t.enc.blocks_per_stage,
            window: t.enc.window,
            heads: t.enc.heads,
            d_img: t.enc.out_dim,
            per_band_encoders: t.enc.per_band,
            seq_layers: t.seq.layers,
            seq_heads: t.seq.heads,
            hidden: t.seq.hidden,
            max_len: t.seq.max_len,
            beam_width: t.beam.width,
            bfgs_max_iters: t.bfgs.max_iters,
        }
    }
}

#[derive(Debug)]
pub enum ConfigError {
    Io(io::Error),
    Parse(serde_json::Error),
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::Io(e) => write!(f, "cannot read config file: {e}"),
            ConfigError::Parse(e) => write!(f, "invalid config: {e}"),
        }
    }
}

impl std::error::Error for ConfigError {}

impl RunConfig {
    /// Load from a flat JSON file; absent keys take their defaults, unknown
    /// keys are an error.
    pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = fs::read_to_string(path).map_err(ConfigError::Io)?;
        serde_json::from_str(&text).map_err(ConfigError::Parse)
    }

    /// Write the resolved config with stable formatting.
    pub fn save(&self, path: &Path) -> Result<(), ConfigError> {
        let text = serde_json::to_string_pretty(self).map_err(ConfigError::Parse)?;
        fs::write(path, text + "\n").map_err(ConfigError::Io)
    }

    /// Assemble the core training configuration.
    pub fn to_train_config(&self) -> TrainConfig {
        let defaults = TrainConfig::default();
        TrainConfig {
            seed: self.seed,
            n_samples: self.n_samples,
            scene_side: self.scene_side,
            stage1_epochs: self.stage1_epochs,
            stage2_epochs: self.stage2_epochs,
            lr: self.lr,
            weights: LossWeights {
                lambda_con: self.lambda_con,
                lambda_mse: self.lambda_mse,
                lambda_ce: self.lambda_ce,
                lambda_phy: self.lambda_phy,
            },
            enc: EncoderConfig {
                patch_size: self.patch_size,
                embed_dim: self.embed_dim,
                stages: self.stages,
                blocks_per_stage: self.blocks_per_stage,
                window: self.window,
                heads: self.heads,
                out_dim: self.d_img,
                per_band: self.per_band_encoders,
            },
            seq: SeqModelConfig {
                layers: self.seq_layers,
                heads: self.seq_heads,
                hidden: self.hidden,
                vocab: defaults.seq.vocab,
                max_len: self.max_len,
            },
            beam: BeamConfig {
                width: self.beam_width,
                max_len: self.max_len,
                ..defaults.beam
            },
            bfgs: BfgsConfig {
                max_iters: self.bfgs_max_iters,
                ..defaults.bfgs
            },
        }
    }
}
