//! Classifier plus optional per-aspect generators behind one call.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vpsn_core::corpus::{build_input_from_parts, parse_unified_diff, Aspect, AspectSet, InputVariant};
use vpsn_core::decode::{generate_aspects, render_explanation, AspectGenerators, GenerationConfig};
use vpsn_core::nn::{load_checkpoint, Model};
use vpsn_core::text::Vocabulary;
use vpsn_core::{Error, Result};

/// Patch probability at or above this is labelled 1.
pub const THRESHOLD: f64 = 0.5;

/// The service always classifies message plus full code.
pub const SERVE_VARIANT: InputVariant = InputVariant::MessageAndAllCode;

/// File name of the vocabulary stored next to a classifier checkpoint.
pub const VOCAB_FILE: &str = "vocab.txt";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub probability: f64,
    pub label: u8,
    pub aspects: AspectSet,
    /// Rendered sentence; absent for non-patches.
    pub explanation: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Predictor {
    classifier: Model<f32>,
    vocab: Vocabulary,
    generators: AspectGenerators,
    generation: GenerationConfig,
}

/// `<dir>/<aspect>.ckpt`, e.g. `generators/root_cause.ckpt`.
pub fn generator_path(dir: &Path, aspect: Aspect) -> PathBuf {
    dir.join(format!("{}.ckpt", aspect.name()))
}

/// Vocabulary path that belongs to a classifier checkpoint.
pub fn vocab_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_file_name(VOCAB_FILE)
}

impl Predictor {
    pub fn new(classifier: Model<f32>, vocab: Vocabulary, generators: AspectGenerators) -> Result<Self> {
        if classifier.architecture().is_generator() {
            return Err(Error::InvalidArgument(format!(
                "{} cannot classify commits",
                classifier.architecture()
            )));
        }
        if classifier.vocab_digest != vocab.digest() {
            return Err(Error::Checkpoint("classifier was trained with a different vocabulary".into()));
        }
        for (aspect, model) in &generators.models {
            if !model.architecture().is_generator() {
                return Err(Error::InvalidArgument(format!(
                    "{aspect} checkpoint holds {}, not a generator",
                    model.architecture()
                )));
            }
        }
        generators.check_vocabulary(&vocab)?;
        Ok(Predictor {
            classifier,
            vocab,
            generators,
            generation: GenerationConfig::default(),
        })
    }

    /// Loads `checkpoint`, the `vocab.txt` beside it, and whichever
    /// `<aspect>.ckpt` files exist in `generators_dir`.
    pub fn load(checkpoint: &Path, generators_dir: Option<&Path>) -> Result<Self> {
        if !checkpoint.is_file() {
            return Err(Error::Checkpoint(format!("{} does not exist", checkpoint.display())));
        }
        let vocab = Vocabulary::load(vocab_path(checkpoint))?;
        let classifier = load_checkpoint(checkpoint, &vocab)?;
        let mut generators = AspectGenerators::default();
        if let Some(dir) = generators_dir {
            if !dir.is_dir() {
                return Err(Error::InvalidArgument(format!("{} is not a directory", dir.display())));
            }
            for aspect in Aspect::ALL {
                let path = generator_path(dir, aspect);
                if path.exists() {
                    generators.insert(aspect, load_checkpoint(&path, &vocab)?);
                }
            }
        }
        Predictor::new(classifier, vocab, generators)
    }

    pub fn with_generation(mut self, generation: GenerationConfig) -> Result<Self> {
        generation.validate()?;
        self.generation = generation;
        Ok(self)
    }

    pub fn generator_aspects(&self) -> Vec<Aspect> {
        self.generators.models.keys().copied().collect()
    }

    pub fn predict(&self, message: &str, diff: &str) -> Result<Prediction> {
        let segments = parse_unified_diff(diff)?;
        let input = build_input_from_parts(message, &segments, SERVE_VARIANT);
        let encoded = self.classifier.encode(&input, &self.vocab);
        let probability = self.classifier.predict_proba(&encoded)?[1];
        if probability < THRESHOLD {
            return Ok(Prediction {
                probability,
                label: 0,
                aspects: AspectSet::default(),
                explanation: None,
            });
        }
        let aspects = if self.generators.is_empty() {
            AspectSet::default()
        } else {
            generate_aspects(&self.generators, &self.vocab, &input, &self.generation)?
        };
        let explanation = render_explanation(&aspects);
        Ok(Prediction {
            probability,
            label: 1,
            aspects: explanation.aspects,
            explanation: Some(explanation.rendered),
        })
    }
}
