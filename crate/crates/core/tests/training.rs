mod common;

use common::{rng, scramble};
use vpsn_core::corpus::{code_text, synthetic_corpus, Aspect, CommitRecord, InputVariant};
use vpsn_core::nn::{Architecture, EncodedInput, Model, ModelConfig, Tape};
use vpsn_core::text::{build_vocab, TokenSequence, Vocabulary, BOS, EOS, PAD};
use vpsn_core::training::{train_generator, TrainConfig};

fn padded(ids: &[usize], len: usize) -> TokenSequence {
    let mut p = ids.to_vec();
    p.resize(len, PAD);
    let mut attention_mask = vec![1u8; ids.len()];
    attention_mask.resize(len, 0);
    TokenSequence { ids: p, attention_mask }
}

fn loss_value(model: &Model<f64>, input: &EncodedInput, reference: &[usize]) -> f64 {
    let mut tape = Tape::new(model.params.values());
    let loss = model.generator_loss(&mut tape, input, reference, &mut None).unwrap();
    tape.value(loss).get(0, 0)
}

fn model(arch: Architecture, seed: u64) -> Model<f64> {
    let mut m = Model::<f64>::new(ModelConfig { num_heads: 2, ..ModelConfig::tiny(arch, 16, 12) }, seed).unwrap();
    scramble(&mut m.params, &mut rng(seed), 0.6);
    m
}

#[test]
fn length_one_reference_is_two_token_cross_entropy() {
    for arch in [Architecture::Seq2SeqGenerator, Architecture::DualEncoderFusionGenerator] {
        let m = model(arch, 3);
        let input = if arch.is_dual_encoder() {
            EncodedInput::Dual { text: padded(&[2, 9, 3], 12), code: padded(&[2, 10, 11, 3], 12) }
        } else {
            EncodedInput::Pair(padded(&[2, 9, 3, 10, 11, 3], 12))
        };
        let (memory, mask) = m.memory(&input).unwrap();
        let logits = m.decoder_forward(&[BOS, 8], &memory, &mask).unwrap();
        let nll = |row: usize, target: usize| {
            let r = logits.row(row);
            let lse = r.iter().map(|v| v.exp()).sum::<f64>().ln();
            lse - r[target]
        };
        let expected = (nll(0, 8) + nll(1, EOS)) / 2.0;
        assert!((loss_value(&m, &input, &[8]) - expected).abs() < 1e-12, "{arch}");
    }
}

#[test]
fn padding_tail_does_not_change_generator_loss() {
    let m = model(Architecture::Seq2SeqGenerator, 5);
    let short = EncodedInput::Pair(padded(&[2, 9, 3, 10, 3], 6));
    let long = EncodedInput::Pair(padded(&[2, 9, 3, 10, 3], 12));
    assert_eq!(loss_value(&m, &short, &[7, 8]), loss_value(&m, &long, &[7, 8]));
}

fn toy_patches() -> (Vec<CommitRecord>, Vocabulary) {
    let data: Vec<CommitRecord> = synthetic_corpus(400, 40, 3)
        .into_iter()
        .filter(|r| r.label.is_positive())
        .take(8)
        .collect();
    let mut texts: Vec<String> = Vec::new();
    for r in &data {
        texts.push(r.message.clone());
        texts.push(code_text(&r.segments, true));
        for a in Aspect::ALL {
            texts.push(r.aspect(a).unwrap().to_string());
        }
    }
    let vocab = build_vocab(&texts, 1, 10_000).unwrap();
    (data, vocab)
}

#[test]
fn generator_loss_trends_down_over_first_epochs() {
    let (data, vocab) = toy_patches();
    let refs: Vec<&CommitRecord> = data.iter().collect();
    let arch = Architecture::DualEncoderFusionGenerator;
    let mut mc = ModelConfig::new(arch, vocab.len());
    mc.dropout_rate = 0.0;
    let mut cfg = TrainConfig::generator(arch, InputVariant::MessageAndAllCode, Aspect::VulnerabilityType);
    cfg.learning_rate = Some(1e-3);
    cfg.validation_fraction = 0.0;
    cfg.batch_size = 8;
    cfg.max_epochs = 20;
    let out = train_generator(&refs, &vocab, &mc, &cfg).unwrap();
    let losses = out.history.train_losses();
    assert_eq!(losses.len(), 20);
    let upticks = losses.windows(2).filter(|w| w[1] > w[0]).count();
    assert!(upticks <= 3, "{upticks} upticks in {losses:?}");
    assert!(losses[19] < losses[0]);
    assert_eq!(out.rejected, 0);
}
