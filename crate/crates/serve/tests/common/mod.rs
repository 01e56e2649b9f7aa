//! Small overfit classifier and generators written to a temporary directory.

#![allow(dead_code)]

use std::path::{Path, PathBuf};

use vpsn_core::corpus::{code_text, synthetic_corpus, Aspect, CommitRecord, InputVariant};
use vpsn_core::nn::{save_checkpoint, Architecture, ModelConfig};
use vpsn_core::text::{build_vocab, Vocabulary};
use vpsn_core::training::{train_classifier, train_generator, TrainConfig};
use vpsn_serve::predictor::{generator_path, vocab_path};

pub struct Toy {
    pub records: Vec<CommitRecord>,
    pub checkpoint: PathBuf,
    pub generators: PathBuf,
}

fn small(arch: Architecture, vocab: &Vocabulary) -> ModelConfig {
    ModelConfig {
        hidden_dim: 32,
        embed_dim: 32,
        num_encoder_layers: 1,
        num_decoder_layers: 1,
        seq_len: 96,
        dropout_rate: 0.0,
        ..ModelConfig::new(arch, vocab.len())
    }
}

fn fast(mut cfg: TrainConfig) -> TrainConfig {
    cfg.learning_rate = Some(1e-2);
    cfg.validation_fraction = 0.0;
    cfg.batch_size = 8;
    cfg.target_train_loss = Some(0.01);
    cfg
}

/// Eight patches (distinct templates) and eight ordinary commits.
pub fn toy(dir: &Path) -> Toy {
    let all = synthetic_corpus(400, 40, 3);
    let positives: Vec<CommitRecord> = all.iter().filter(|r| r.label.is_positive()).take(8).cloned().collect();
    let negatives: Vec<CommitRecord> = all.iter().filter(|r| !r.label.is_positive()).take(8).cloned().collect();
    let records: Vec<CommitRecord> = positives.iter().chain(&negatives).cloned().collect();
    let mut texts = Vec::new();
    for r in &records {
        texts.push(r.message.clone());
        texts.push(code_text(&r.segments, true));
        for a in Aspect::ALL {
            texts.extend(r.aspect(a).map(str::to_string));
        }
    }
    let vocab = build_vocab(&texts, 1, 10_000).unwrap();
    let checkpoint = dir.join("classifier.ckpt");
    vocab.save(vocab_path(&checkpoint)).unwrap();

    let refs: Vec<&CommitRecord> = records.iter().collect();
    let arch = Architecture::TransformerClassifier;
    let cfg = fast(TrainConfig::new(arch, InputVariant::MessageAndAllCode));
    let trained = train_classifier(&refs, &vocab, &small(arch, &vocab), &cfg).unwrap();
    save_checkpoint(&trained.model, &checkpoint).unwrap();

    let generators = dir.join("generators");
    std::fs::create_dir_all(&generators).unwrap();
    let pos_refs: Vec<&CommitRecord> = positives.iter().collect();
    for aspect in Aspect::ALL {
        let arch = Architecture::Seq2SeqGenerator;
        let cfg = fast(TrainConfig::generator(arch, InputVariant::MessageAndAllCode, aspect));
        let trained = train_generator(&pos_refs, &vocab, &small(arch, &vocab), &cfg).unwrap();
        save_checkpoint(&trained.model, generator_path(&generators, aspect)).unwrap();
    }
    Toy { records, checkpoint, generators }
}
