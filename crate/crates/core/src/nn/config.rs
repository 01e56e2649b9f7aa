use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Architecture {
    LstmClassifier,
    TransformerClassifier,
    DualEncoderFusionClassifier,
    Seq2SeqGenerator,
    DualEncoderFusionGenerator,
}

impl Architecture {
    pub const ALL: [Architecture; 5] = [
        Architecture::LstmClassifier,
        Architecture::TransformerClassifier,
        Architecture::DualEncoderFusionClassifier,
        Architecture::Seq2SeqGenerator,
        Architecture::DualEncoderFusionGenerator,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Architecture::LstmClassifier => "lstm-classifier",
            Architecture::TransformerClassifier => "transformer-classifier",
            Architecture::DualEncoderFusionClassifier => "dual-encoder-fusion-classifier",
            Architecture::Seq2SeqGenerator => "seq2seq-generator",
            Architecture::DualEncoderFusionGenerator => "dual-encoder-fusion-generator",
        }
    }

    /// Short name used on the command line.
    pub fn short_name(self) -> &'static str {
        match self {
            Architecture::LstmClassifier => "lstm",
            Architecture::TransformerClassifier => "transformer",
            Architecture::DualEncoderFusionClassifier => "fusion",
            Architecture::Seq2SeqGenerator => "seq2seq",
            Architecture::DualEncoderFusionGenerator => "fusion-gen",
        }
    }

    pub fn is_generator(self) -> bool {
        matches!(
            self,
            Architecture::Seq2SeqGenerator | Architecture::DualEncoderFusionGenerator
        )
    }

    pub fn is_dual_encoder(self) -> bool {
        matches!(
            self,
            Architecture::DualEncoderFusionClassifier | Architecture::DualEncoderFusionGenerator
        )
    }

    /// Default Adam learning rate: 1e-4 for the LSTM, 1e-5 for the rest.
    pub fn default_learning_rate(self) -> f64 {
        match self {
            Architecture::LstmClassifier => 1e-4,
            _ => 1e-5,
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Architecture::ALL
            .into_iter()
            .find(|a| a.name() == s || a.short_name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown architecture {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub architecture: Architecture,
    pub vocab_size: usize,
    pub seq_len: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub num_heads: usize,
    pub num_encoder_layers: usize,
    pub num_decoder_layers: usize,
    pub dropout_rate: f64,
    /// Layer-normalize the fused states after the residual add.
    #[serde(default)]
    pub fusion_post_norm: bool,
}

impl ModelConfig {
    /// Desk-scale defaults: 64-wide, 2 heads, 2+2 layers, 256 tokens.
    pub fn new(architecture: Architecture, vocab_size: usize) -> Self {
        ModelConfig {
            architecture,
            vocab_size,
            seq_len: crate::text::DEFAULT_MAX_LEN,
            embed_dim: 64,
            hidden_dim: 64,
            num_heads: 2,
            num_encoder_layers: 2,
            num_decoder_layers: 2,
            dropout_rate: 0.1,
            fusion_post_norm: false,
        }
    }

    /// Minimal shape used for gradient checks: width 8, one layer, one head.
    pub fn tiny(architecture: Architecture, vocab_size: usize, seq_len: usize) -> Self {
        ModelConfig {
            architecture,
            vocab_size,
            seq_len,
            embed_dim: 8,
            hidden_dim: 8,
            num_heads: 1,
            num_encoder_layers: 1,
            num_decoder_layers: 1,
            dropout_rate: 0.0,
            fusion_post_norm: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.vocab_size < crate::text::NUM_SPECIALS {
            return bad(format!("vocab_size {} is smaller than the special tokens", self.vocab_size));
        }
        if self.seq_len < 4 {
            return bad(format!("seq_len must be at least 4, got {}", self.seq_len));
        }
        if self.embed_dim == 0 || self.hidden_dim == 0 {
            return bad("embed_dim and hidden_dim must be positive".into());
        }
        if self.num_heads == 0 || !self.hidden_dim.is_multiple_of(self.num_heads) {
            return bad(format!(
                "hidden_dim {} must be divisible by num_heads {}",
                self.hidden_dim, self.num_heads
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate must be in [0, 1), got {}", self.dropout_rate));
        }
        if self.architecture.is_generator() && self.num_decoder_layers == 0 {
            return bad("generators need at least one decoder layer".into());
        }
        Ok(())
    }

    /// Field name/value pairs in declaration order.
    pub fn fields(&self) -> Vec<(&'static str, String)> {
        vec![
            ("architecture", self.architecture.name().to_string()),
            ("vocab_size", self.vocab_size.to_string()),
            ("seq_len", self.seq_len.to_string()),
            ("embed_dim", self.embed_dim.to_string()),
            ("hidden_dim", self.hidden_dim.to_string()),
            ("num_heads", self.num_heads.to_string()),
            ("num_encoder_layers", self.num_encoder_layers.to_string()),
            ("num_decoder_layers", self.num_decoder_layers.to_string()),
            ("dropout_rate", self.dropout_rate.to_string()),
            ("fusion_post_norm", self.fusion_post_norm.to_string()),
        ]
    }

    /// First field whose value differs, as `(field, self value, other value)`.
    pub fn first_difference(&self, other: &ModelConfig) -> Option<(&'static str, String, String)> {
        self.fields()
            .into_iter()
            .zip(other.fields())
            .find(|(a, b)| a.1 != b.1)
            .map(|((name, a), (_, b))| (name, a, b))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        let mut c = ModelConfig::new(Architecture::TransformerClassifier, 100);
        c.validate().unwrap();
        c.num_heads = 3;
        assert!(c.validate().is_err());
        c.num_heads = 2;
        c.dropout_rate = 1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn names_parse() {
        for a in Architecture::ALL {
            assert_eq!(a.name().parse::<Architecture>().unwrap(), a);
            assert_eq!(a.short_name().parse::<Architecture>().unwrap(), a);
        }
    }

    #[test]
    fn first_difference_names_field() {
        let a = ModelConfig::new(Architecture::Seq2SeqGenerator, 50);
        let mut b = a.clone();
        b.hidden_dim = 32;
        b.num_heads = 4;
        assert_eq!(a.first_difference(&b).unwrap().0, "hidden_dim");
        assert!(a.first_difference(&a).is_none());
    }
}
