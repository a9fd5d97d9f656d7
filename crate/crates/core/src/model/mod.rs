//! Geometry-aware masked attention, the local encoder / global query decoder
//! stack built from it, feature jitter and the reconstruction objective.

mod attention;
mod checkpoint;
mod mask;
mod network;

pub use attention::{Agma, FeedForward};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CheckpointMeta, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use mask::{select_mask, MaskPlan};
pub use network::{DecoderBlock, EncoderBlock, Mode, Model, Pass};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{GeometryError, VariationWeights};
use crate::tensor::TensorError;
use crate::tokenizer::TokenizerError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("argument error: {0}")]
    Argument(String),
    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Every architectural and masking hyperparameter of a model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Number of groups `g` (one per sampled center).
    pub groups: usize,
    /// Points per group `k`.
    pub group_size: usize,
    /// Token width `c`.
    pub channels: usize,
    pub heads: usize,
    /// Blocks `N` in both the encoder and the decoder.
    pub blocks: usize,
    pub ffn_expansion: usize,
    /// Jitter strength.
    pub gamma: f64,
    /// Fraction of key tokens masked per training step.
    pub rho: f64,
    pub alpha: f64,
    pub beta: f64,
    pub eta: f64,
    pub train_encoder: bool,
    pub mask_encoder: bool,
    pub mask_decoder: bool,
    pub use_decoder: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            groups: 128,
            group_size: 32,
            channels: 64,
            heads: 4,
            blocks: 4,
            ffn_expansion: 4,
            gamma: 20.0,
            rho: 0.4,
            alpha: 1.0,
            beta: 10.0,
            eta: 7.0,
            train_encoder: false,
            mask_encoder: true,
            mask_decoder: true,
            use_decoder: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |msg: String| Err(ModelError::Config(msg));
        if self.groups < 2 {
            return fail(format!("groups must be at least 2, got {}", self.groups));
        }
        if self.group_size == 0 {
            return fail("group_size must be positive".into());
        }
        if self.channels < 2 || self.heads == 0 || self.channels % self.heads != 0 {
            return fail(format!(
                "channels ({}) must be at least 2 and divisible by heads ({})",
                self.channels, self.heads
            ));
        }
        if self.blocks == 0 || self.ffn_expansion == 0 {
            return fail("blocks and ffn_expansion must be positive".into());
        }
        if !(0.0..1.0).contains(&self.rho) {
            return fail(format!("rho must be in [0, 1), got {}", self.rho));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return fail(format!("gamma must be finite and non-negative, got {}", self.gamma));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return fail(format!("eta must be positive, got {}", self.eta));
        }
        if !(self.alpha.is_finite() && self.beta.is_finite()) {
            return fail("alpha and beta must be finite".into());
        }
        Ok(())
    }

    pub fn variation_weights(&self) -> VariationWeights {
        VariationWeights {
            alpha: self.alpha,
            beta: self.beta,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.channels / self.heads
    }
}

/// Named model variants for module ablations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    /// Masked attention in encoder and decoder.
    Full,
    /// Encoder and decoder with plain attention.
    NoAgma,
    /// Plain-attention encoder, no decoder.
    LgeOnly,
    /// Masked encoder, no decoder.
    LgeAgma,
    /// Plain encoder, masked decoder.
    GqdAgma,
}

impl Ablation {
    pub const ALL: [Ablation; 5] = [Self::Full, Self::NoAgma, Self::LgeOnly, Self::LgeAgma, Self::GqdAgma];

    pub fn name(self) -> &'static str {
        match self {
            Self::Full => "full",
            Self::NoAgma => "no-agma",
            Self::LgeOnly => "lge-only",
            Self::LgeAgma => "lge-agma",
            Self::GqdAgma => "gqd-agma",
        }
    }

    pub fn apply(self, config: &mut ModelConfig) {
        let (enc, dec, use_dec) = match self {
            Self::Full => (true, true, true),
            Self::NoAgma => (false, false, true),
            Self::LgeOnly => (false, false, false),
            Self::LgeAgma => (true, false, false),
            Self::GqdAgma => (false, true, true),
        };
        config.mask_encoder = enc;
        config.mask_decoder = dec;
        config.use_decoder = use_dec;
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Ablation {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| ModelError::Config(format!("unknown ablation {s:?}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        ModelConfig::default().validate().unwrap();
    }

    #[test]
    fn rejects_bad_configs() {
        let bad = [
            ModelConfig { rho: 1.0, ..Default::default() },
            ModelConfig { channels: 30, ..Default::default() },
            ModelConfig { gamma: -1.0, ..Default::default() },
            ModelConfig { groups: 1, ..Default::default() },
        ];
        for c in bad {
            assert!(matches!(c.validate(), Err(ModelError::Config(_))), "{c:?}");
        }
    }

    #[test]
    fn ablation_names_round_trip() {
        for a in Ablation::ALL {
            assert_eq!(a.name().parse::<Ablation>().unwrap(), a);
        }
        let mut c = ModelConfig::default();
        Ablation::NoAgma.apply(&mut c);
        assert!(!c.mask_encoder && !c.mask_decoder && c.use_decoder);
    }
}
