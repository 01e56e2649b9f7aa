//! Losses, Adam, classifier and generator training, gradient checking and
//! the cross-validation driver.

mod adam;
mod cv;
pub mod gradcheck;
mod loss;
mod trainer;

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Aspect, InputVariant};
use crate::error::{Error, Result};
use crate::nn::Architecture;

pub use adam::{adam_step, AdamHyper, AdamState};
pub use cv::{corpus_vocab, run_cross_validation, CvOutcome, CvSettings, GeneratedRecord, ScoredRecord};
pub use gradcheck::{check_architecture, check_gradients, GradCheckOptions, GradCheckReport, TensorCheck};
pub use loss::{cross_entropy, pad_targets, Prediction};
pub use trainer::{
    classifier_auc, encode_classifier_examples, encode_generator_examples, train_classifier,
    train_generator, ClassifierExample, GeneratorExample, TrainOutcome,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub architecture: Architecture,
    #[serde(default = "default_variant")]
    pub input_variant: InputVariant,
    /// Required for generator architectures, forbidden otherwise.
    #[serde(default)]
    pub aspect_target: Option<Aspect>,
    /// `None` picks the architecture default (1e-4 LSTM, 1e-5 otherwise).
    #[serde(default)]
    pub learning_rate: Option<f64>,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    #[serde(default)]
    pub seed: u64,
    /// Epochs without validation improvement before stopping; 0 disables.
    #[serde(default = "default_patience")]
    pub early_stop_patience: usize,
    #[serde(default = "default_validation_fraction")]
    pub validation_fraction: f64,
    /// Stop once the epoch's mean training loss drops below this.
    #[serde(default)]
    pub target_train_loss: Option<f64>,
    /// Generator references are truncated to this many tokens.
    #[serde(default = "default_max_target_tokens")]
    pub max_target_tokens: usize,
}

fn default_variant() -> InputVariant {
    InputVariant::MessageAndAllCode
}
fn default_batch_size() -> usize {
    16
}
fn default_max_epochs() -> usize {
    200
}
fn default_patience() -> usize {
    10
}
fn default_validation_fraction() -> f64 {
    0.1
}
fn default_max_target_tokens() -> usize {
    32
}

impl TrainConfig {
    pub fn new(architecture: Architecture, input_variant: InputVariant) -> Self {
        TrainConfig {
            architecture,
            input_variant,
            aspect_target: None,
            learning_rate: None,
            batch_size: default_batch_size(),
            max_epochs: default_max_epochs(),
            seed: 0,
            early_stop_patience: default_patience(),
            validation_fraction: default_validation_fraction(),
            target_train_loss: None,
            max_target_tokens: default_max_target_tokens(),
        }
    }

    pub fn generator(architecture: Architecture, input_variant: InputVariant, aspect: Aspect) -> Self {
        TrainConfig {
            aspect_target: Some(aspect),
            ..TrainConfig::new(architecture, input_variant)
        }
    }

    pub fn effective_learning_rate(&self) -> f64 {
        self.learning_rate
            .unwrap_or_else(|| self.architecture.default_learning_rate())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        let lr = self.effective_learning_rate();
        if !(lr > 0.0 && lr.is_finite()) {
            return bad(format!("learning_rate must be positive, got {lr}"));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.max_target_tokens == 0 {
            return bad("batch_size, max_epochs and max_target_tokens must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad(format!(
                "validation_fraction must be in [0, 1), got {}",
                self.validation_fraction
            ));
        }
        match (self.architecture.is_generator(), self.aspect_target) {
            (true, None) => bad(format!("{} needs an aspect_target", self.architecture)),
            (false, Some(a)) => bad(format!(
                "{} is a classifier; aspect_target {a} does not apply",
                self.architecture
            )),
            _ => Ok(()),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: TrainConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept (the last one without validation).
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl TrainHistory {
    pub fn train_losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.train_loss).collect()
    }

    pub fn final_train_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.train_loss)
    }

    /// `epoch,train_loss,val_loss,seconds`; an empty `val_loss` means no
    /// validation split.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["epoch", "train_loss", "val_loss", "seconds"])?;
        for e in &self.epochs {
            w.write_record([
                e.epoch.to_string(),
                format!("{:?}", e.train_loss),
                e.val_loss.map(|v| format!("{v:?}")).unwrap_or_default(),
                format!("{:.3}", e.seconds),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<history csv>", e))?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

/// SplitMix64 finalizer; derives independent sub-seeds.
pub(crate) fn mix_seed(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x9E37_79B9_7F4A_7C15;
    for &p in parts {
        let mut z = h ^ p.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h = z ^ (z >> 31);
    }
    h
}
