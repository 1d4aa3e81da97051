use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};
use crate::vocab::NUM_RESERVED;

/// Architecture hyperparameters. The decoder is deliberately shallower
/// than the encoder; validation enforces it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub hidden_size: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub attention_heads: usize,
    pub max_sequence_length: usize,
    pub ff_multiplier: usize,
}

impl Default for ModelConfig {
    /// Desk-scale defaults: one pre-training run finishes in minutes while
    /// every architectural relation (tying, bottleneck, weakened decoder)
    /// is preserved.
    fn default() -> Self {
        ModelConfig {
            vocab_size: 2000,
            hidden_size: 64,
            encoder_layers: 4,
            decoder_layers: 2,
            attention_heads: 4,
            max_sequence_length: 128,
            ff_multiplier: 4,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_size == 0 || self.attention_heads == 0 {
            return Err(ModelError::InvalidConfig("hidden size and heads must be positive".into()));
        }
        if self.hidden_size % self.attention_heads != 0 {
            return Err(ModelError::InvalidConfig(format!(
                "hidden size {} not divisible by {} attention heads",
                self.hidden_size, self.attention_heads
            )));
        }
        if self.decoder_layers == 0 || self.decoder_layers >= self.encoder_layers {
            return Err(ModelError::InvalidConfig(format!(
                "decoder depth {} must be positive and strictly less than encoder depth {}",
                self.decoder_layers, self.encoder_layers
            )));
        }
        if self.vocab_size <= NUM_RESERVED as usize {
            return Err(ModelError::InvalidConfig(format!(
                "vocabulary size {} leaves no room for real tokens",
                self.vocab_size
            )));
        }
        if self.max_sequence_length < 3 {
            return Err(ModelError::InvalidConfig(
                "max sequence length must fit [CLS] x [SEP]".into(),
            ));
        }
        if self.ff_multiplier == 0 {
            return Err(ModelError::InvalidConfig("feed-forward multiplier must be positive".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_size / self.attention_heads
    }

    pub fn ff_dim(&self) -> usize {
        self.hidden_size * self.ff_multiplier
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        ModelConfig::default().validate().unwrap();
    }

    #[test]
    fn indivisible_heads_rejected() {
        let cfg = ModelConfig { hidden_size: 65, ..Default::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn decoder_must_be_weaker_than_encoder() {
        let cfg = ModelConfig { decoder_layers: 4, encoder_layers: 4, ..Default::default() };
        assert!(cfg.validate().is_err());
        let cfg = ModelConfig { decoder_layers: 5, encoder_layers: 4, ..Default::default() };
        assert!(cfg.validate().is_err());
    }
}
