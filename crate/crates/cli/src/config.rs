//! Optional JSON hyperparameter file shared by `train` and `eval`.
//!
//! Every key is optional; missing keys keep the library defaults.
//!
//! ```json
//! { "learning_rate": 1e-3, "max_epochs": 50, "hidden_dim": 32, "seq_len": 128 }
//! ```

use std::path::Path;

use anyhow::{Context, Result};
use serde::Deserialize;
use vpsn_core::decode::GenerationConfig;
use vpsn_core::nn::ModelConfig;
use vpsn_core::training::TrainConfig;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    // training
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub max_epochs: Option<usize>,
    pub early_stop_patience: Option<usize>,
    pub validation_fraction: Option<f64>,
    pub target_train_loss: Option<f64>,
    pub max_target_tokens: Option<usize>,
    // model
    pub seq_len: Option<usize>,
    pub embed_dim: Option<usize>,
    pub hidden_dim: Option<usize>,
    pub num_heads: Option<usize>,
    pub num_encoder_layers: Option<usize>,
    pub num_decoder_layers: Option<usize>,
    pub dropout_rate: Option<f64>,
    pub fusion_post_norm: Option<bool>,
    // vocabulary
    pub vocab_min_freq: Option<usize>,
    pub vocab_max_size: Option<usize>,
    // decoding
    pub max_new_tokens: Option<usize>,
    pub beam_width: Option<usize>,
    pub length_penalty: Option<f64>,
}

fn set<T: Copy>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn apply_train(&self, cfg: &mut TrainConfig) {
        if self.learning_rate.is_some() {
            cfg.learning_rate = self.learning_rate;
        }
        if self.target_train_loss.is_some() {
            cfg.target_train_loss = self.target_train_loss;
        }
        set(&mut cfg.batch_size, self.batch_size);
        set(&mut cfg.max_epochs, self.max_epochs);
        set(&mut cfg.early_stop_patience, self.early_stop_patience);
        set(&mut cfg.validation_fraction, self.validation_fraction);
        set(&mut cfg.max_target_tokens, self.max_target_tokens);
    }

    pub fn apply_model(&self, m: &mut ModelConfig) {
        set(&mut m.seq_len, self.seq_len);
        set(&mut m.embed_dim, self.embed_dim);
        set(&mut m.hidden_dim, self.hidden_dim);
        set(&mut m.num_heads, self.num_heads);
        set(&mut m.num_encoder_layers, self.num_encoder_layers);
        set(&mut m.num_decoder_layers, self.num_decoder_layers);
        set(&mut m.dropout_rate, self.dropout_rate);
        set(&mut m.fusion_post_norm, self.fusion_post_norm);
    }

    pub fn apply_generation(&self, g: &mut GenerationConfig) {
        set(&mut g.max_new_tokens, self.max_new_tokens);
        set(&mut g.beam_width, self.beam_width);
        set(&mut g.length_penalty, self.length_penalty);
    }

    pub fn vocab_limits(&self) -> (usize, usize) {
        (self.vocab_min_freq.unwrap_or(1), self.vocab_max_size.unwrap_or(20_000))
    }
}
