//! Mini-batch training loop shared by classifiers and generators.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::{adam_step, AdamHyper, AdamState};
use super::{mix_seed, EpochRecord, TrainConfig, TrainHistory};
use crate::corpus::{build_input, Aspect, CommitRecord};
use crate::error::{Error, Result};
use crate::eval::auc;
use crate::nn::{Dropout, EncodedInput, Matrix, Model, ModelConfig, Tape, Var};
use crate::parallel::map_ordered;
use crate::text::Vocabulary;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassifierExample {
    pub input: EncodedInput,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneratorExample {
    pub input: EncodedInput,
    /// Reference token ids, without BOS/EOS.
    pub target: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model<f32>,
    pub history: TrainHistory,
    /// Records skipped because they lacked the target aspect.
    pub rejected: usize,
}

pub fn encode_classifier_examples(model: &Model<f32>, records: &[&CommitRecord], vocab: &Vocabulary, cfg: &TrainConfig) -> Vec<ClassifierExample> {
    records
        .iter()
        .map(|r| ClassifierExample {
            input: model.encode(&build_input(r, cfg.input_variant), vocab),
            label: r.label.as_u8() as usize,
        })
        .collect()
}

/// Encodes records carrying `aspect`; returns the examples and how many
/// records were rejected for lacking a usable reference.
pub fn encode_generator_examples(model: &Model<f32>, records: &[&CommitRecord], vocab: &Vocabulary, aspect: Aspect, cfg: &TrainConfig) -> (Vec<GeneratorExample>, usize) {
    let mut rejected = 0;
    let mut out = Vec::new();
    for r in records {
        let mut target = r.aspect(aspect).map(|t| vocab.ids(t)).unwrap_or_default();
        target.truncate(cfg.max_target_tokens);
        if target.is_empty() {
            rejected += 1;
            continue;
        }
        out.push(GeneratorExample {
            input: model.encode(&build_input(r, cfg.input_variant), vocab),
            target,
        });
    }
    (out, rejected)
}

fn check_model_config(model_config: &ModelConfig, cfg: &TrainConfig, vocab: &Vocabulary) -> Result<()> {
    cfg.validate()?;
    if model_config.architecture != cfg.architecture {
        return Err(Error::InvalidArgument(format!(
            "model config is for {} but training config is for {}",
            model_config.architecture, cfg.architecture
        )));
    }
    if model_config.vocab_size != vocab.len() {
        return Err(Error::InvalidArgument(format!(
            "model vocab_size {} does not match the vocabulary ({} tokens)",
            model_config.vocab_size,
            vocab.len()
        )));
    }
    Ok(())
}

/// Splits `n` items into (train, validation) index lists. With `strata`,
/// each stratum contributes its own share to validation.
fn holdout(n: usize, strata: Option<&[usize]>, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, 0x5EED]));
    let groups: Vec<Vec<usize>> = match strata {
        Some(s) => {
            let max = s.iter().copied().max().unwrap_or(0);
            (0..=max)
                .map(|g| (0..n).filter(|&i| s[i] == g).collect())
                .collect()
        }
        None => vec![(0..n).collect()],
    };
    let mut train = Vec::new();
    let mut val = Vec::new();
    for mut g in groups {
        g.shuffle(&mut rng);
        let take = (g.len() as f64 * fraction).floor() as usize;
        // Never empty a stratum on the training side.
        let take = take.min(g.len().saturating_sub(1));
        val.extend_from_slice(&g[..take]);
        train.extend_from_slice(&g[take..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

type LossFn<'f, E> = dyn Fn(&Model<f32>, &mut Tape<'_, f32>, &E, &mut Option<Dropout>) -> Result<Var> + Sync + 'f;

fn sum_gradients(total: &mut [Option<Matrix<f32>>], grads: Vec<Option<Matrix<f32>>>) {
    for (t, g) in total.iter_mut().zip(grads) {
        if let Some(g) = g {
            match t {
                Some(t) => t.add_assign(&g),
                None => *t = Some(g),
            }
        }
    }
}

fn mean_loss<E: Sync>(model: &Model<f32>, examples: &[E], loss_fn: &LossFn<'_, E>) -> Result<f64> {
    let losses = map_ordered(examples, |_, ex| {
        let mut tape = Tape::new(model.params.values());
        let loss = loss_fn(model, &mut tape, ex, &mut None)?;
        Ok::<f64, Error>(tape.value(loss).get(0, 0) as f64)
    });
    let mut total = 0.0;
    for l in losses {
        total += l?;
    }
    Ok(total / examples.len() as f64)
}

/// Runs Adam over shuffled mini-batches. Per-example gradients may be
/// computed in parallel but are summed in example order, so results depend
/// only on the seed. With a validation split the best-scoring parameters
/// are restored at the end.
fn fit<E: Sync>(model: &mut Model<f32>, train: &[E], val: &[E], cfg: &TrainConfig, loss_fn: &LossFn<'_, E>) -> Result<TrainHistory> {
    if train.is_empty() {
        return Err(Error::Training("no training examples".into()));
    }
    let hyper = AdamHyper::new(cfg.effective_learning_rate());
    let mut state = AdamState::new(model.params.values());
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, crate::nn::ParamStore<f32>)> = None;
    let mut since_best = 0;
    let rate = model.config.dropout_rate;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        let started = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[cfg.seed, epoch as u64]));
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let m: &Model<f32> = model;
            let results = map_ordered(batch, |_, &idx| {
                let mut tape = Tape::new(m.params.values());
                let mut drop = (rate > 0.0)
                    .then(|| Dropout::new(rate, mix_seed(&[cfg.seed, epoch as u64, idx as u64])));
                let loss = loss_fn(m, &mut tape, &train[idx], &mut drop)?;
                let value = tape.value(loss).get(0, 0) as f64;
                Ok::<_, Error>((value, tape.backward(loss).grads))
            });
            let mut total: Vec<Option<Matrix<f32>>> = vec![None; model.params.len()];
            for r in results {
                let (value, grads) = r?;
                if !value.is_finite() {
                    return Err(Error::Training(format!("non-finite loss at epoch {epoch}")));
                }
                epoch_loss += value;
                sum_gradients(&mut total, grads);
            }
            let scale = 1.0 / batch.len() as f32;
            for g in total.iter_mut().flatten() {
                g.scale_assign(scale);
            }
            adam_step(model.params.values_mut(), &total, &mut state, &hyper)?;
        }
        let train_loss = epoch_loss / train.len() as f64;
        let val_loss = if val.is_empty() {
            None
        } else {
            Some(mean_loss(model, val, loss_fn)?)
        };
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            seconds: started.elapsed().as_secs_f64(),
        });

        if let Some(v) = val_loss {
            if best.as_ref().is_none_or(|(b, _)| v < *b) {
                best = Some((v, model.params.clone()));
                history.best_epoch = epoch;
                since_best = 0;
            } else {
                since_best += 1;
            }
            if cfg.early_stop_patience > 0 && since_best >= cfg.early_stop_patience {
                history.stopped_early = true;
                break;
            }
        } else {
            history.best_epoch = epoch;
        }
        if cfg.target_train_loss.is_some_and(|t| train_loss < t) {
            break;
        }
    }
    if let Some((_, params)) = best {
        model.params = params;
    }
    Ok(history)
}

fn new_model(model_config: &ModelConfig, cfg: &TrainConfig, vocab: &Vocabulary) -> Result<Model<f32>> {
    Ok(Model::new(model_config.clone(), cfg.seed)?.with_vocab(vocab))
}

/// Trains a classifier on (ideally balanced) records with both labels.
pub fn train_classifier(records: &[&CommitRecord], vocab: &Vocabulary, model_config: &ModelConfig, cfg: &TrainConfig) -> Result<TrainOutcome> {
    check_model_config(model_config, cfg, vocab)?;
    if cfg.architecture.is_generator() {
        return Err(Error::InvalidArgument(format!("{} is not a classifier", cfg.architecture)));
    }
    let positives = records.iter().filter(|r| r.label.is_positive()).count();
    if positives == 0 || positives == records.len() {
        return Err(Error::Training(
            "classifier training needs both patch and non-patch records".into(),
        ));
    }
    let mut model = new_model(model_config, cfg, vocab)?;
    let examples = encode_classifier_examples(&model, records, vocab, cfg);
    let labels: Vec<usize> = examples.iter().map(|e| e.label).collect();
    let (train_idx, val_idx) = holdout(examples.len(), Some(&labels), cfg.validation_fraction, cfg.seed);
    let pick = |idx: &[usize]| idx.iter().map(|&i| examples[i].clone()).collect::<Vec<_>>();
    let (train, val) = (pick(&train_idx), pick(&val_idx));
    let loss_fn = |m: &Model<f32>, tape: &mut Tape<'_, f32>, ex: &ClassifierExample, drop: &mut Option<Dropout>| {
        m.classifier_loss(tape, &ex.input, ex.label, drop)
    };
    let history = fit(&mut model, &train, &val, cfg, &loss_fn)?;
    Ok(TrainOutcome {
        model,
        history,
        rejected: 0,
    })
}

/// Trains one aspect generator with teacher forcing. Records without the
/// target aspect are skipped and counted in [`TrainOutcome::rejected`].
pub fn train_generator(records: &[&CommitRecord], vocab: &Vocabulary, model_config: &ModelConfig, cfg: &TrainConfig) -> Result<TrainOutcome> {
    check_model_config(model_config, cfg, vocab)?;
    let aspect = cfg.aspect_target.ok_or_else(|| Error::InvalidArgument("aspect_target is required".into()))?;
    let mut model = new_model(model_config, cfg, vocab)?;
    let (examples, rejected) = encode_generator_examples(&model, records, vocab, aspect, cfg);
    if examples.is_empty() {
        return Err(Error::Training(format!(
            "no records carry a {aspect} reference ({rejected} rejected)"
        )));
    }
    let (train_idx, val_idx) = holdout(examples.len(), None, cfg.validation_fraction, cfg.seed);
    let pick = |idx: &[usize]| idx.iter().map(|&i| examples[i].clone()).collect::<Vec<_>>();
    let (train, val) = (pick(&train_idx), pick(&val_idx));
    let loss_fn = |m: &Model<f32>, tape: &mut Tape<'_, f32>, ex: &GeneratorExample, drop: &mut Option<Dropout>| {
        m.generator_loss(tape, &ex.input, &ex.target, drop)
    };
    let history = fit(&mut model, &train, &val, cfg, &loss_fn)?;
    Ok(TrainOutcome {
        model,
        history,
        rejected,
    })
}

/// Patch-class probability per example and the resulting AUC.
pub fn classifier_auc(model: &Model<f32>, examples: &[ClassifierExample]) -> Result<(Vec<f64>, f64)> {
    let scores = map_ordered(examples, |_, ex| model.predict_proba(&ex.input).map(|p| p[1]))
        .into_iter()
        .collect::<Result<Vec<f64>>>()?;
    let labels: Vec<bool> = examples.iter().map(|e| e.label == 1).collect();
    let a = auc(&scores, &labels)?;
    Ok((scores, a))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{AspectSet, InputVariant, Label};
    use crate::nn::Architecture;
    use crate::text::build_vocab;

    fn diff(line: &str) -> String {
        format!("--- a/f.c\n+++ b/f.c\n@@ -1,2 +1,2 @@\n int x;\n-{line} old\n+{line} new\n")
    }

    fn records() -> Vec<CommitRecord> {
        (0..8)
            .map(|i| {
                let pos = i % 2 == 0;
                let msg = if pos { format!("fix overflow {i}") } else { format!("update docs {i}") };
                let label = if pos { Label::VulnerablePatch } else { Label::NonPatch };
                let mut r = CommitRecord::new(format!("c{i}"), format!("r{}", i % 3), msg, diff(if pos { "check" } else { "text" }), label).unwrap();
                if pos {
                    r = r.with_aspects(AspectSet {
                        impact: Some(format!("crash the server {i}")),
                        ..Default::default()
                    });
                }
                r
            })
            .collect()
    }

    fn vocab(rs: &[CommitRecord]) -> Vocabulary {
        let mut texts: Vec<String> = rs.iter().map(|r| format!("{} {}", r.message, r.diff)).collect();
        texts.extend(rs.iter().filter_map(|r| r.aspect(Aspect::Impact).map(String::from)));
        build_vocab(&texts, 1, 1000).unwrap()
    }

    #[test]
    fn holdout_is_stratified_and_disjoint() {
        let strata = [0, 1, 0, 1, 0, 1, 0, 1, 0, 1];
        let (t, v) = holdout(10, Some(&strata), 0.2, 3);
        assert_eq!(v.len(), 2);
        assert_eq!(v.iter().filter(|&&i| strata[i] == 1).count(), 1);
        assert_eq!(t.len() + v.len(), 10);
        assert!(t.iter().all(|i| !v.contains(i)));
        assert_eq!(holdout(10, None, 0.0, 1).1.len(), 0);
    }

    #[test]
    fn single_label_rejected() {
        let rs = records();
        let v = vocab(&rs);
        let pos: Vec<&CommitRecord> = rs.iter().filter(|r| r.label.is_positive()).collect();
        let mc = ModelConfig::tiny(Architecture::LstmClassifier, v.len(), 16);
        let cfg = TrainConfig::new(Architecture::LstmClassifier, InputVariant::MessageOnly);
        assert!(matches!(train_classifier(&pos, &v, &mc, &cfg), Err(Error::Training(_))));
    }

    #[test]
    fn training_is_deterministic_and_seed_sensitive() {
        let rs = records();
        let v = vocab(&rs);
        let refs: Vec<&CommitRecord> = rs.iter().collect();
        let mut mc = ModelConfig::tiny(Architecture::TransformerClassifier, v.len(), 24);
        mc.dropout_rate = 0.1;
        let mut cfg = TrainConfig::new(Architecture::TransformerClassifier, InputVariant::MessageAndChangedCode);
        cfg.max_epochs = 4;
        cfg.batch_size = 3;
        cfg.learning_rate = Some(1e-3);
        let a = train_classifier(&refs, &v, &mc, &cfg).unwrap();
        let b = train_classifier(&refs, &v, &mc, &cfg).unwrap();
        assert_eq!(a.model.params, b.model.params);
        assert_eq!(a.history.train_losses(), b.history.train_losses());
        cfg.seed = 9;
        let c = train_classifier(&refs, &v, &mc, &cfg).unwrap();
        assert_ne!(a.history.train_losses(), c.history.train_losses());
        assert!(c.history.epochs.iter().all(|e| e.train_loss.is_finite()));
    }

    #[test]
    fn generator_counts_rejected_records() {
        let rs = records();
        let v = vocab(&rs);
        let refs: Vec<&CommitRecord> = rs.iter().collect();
        let mc = ModelConfig::tiny(Architecture::Seq2SeqGenerator, v.len(), 24);
        let mut cfg = TrainConfig::generator(Architecture::Seq2SeqGenerator, InputVariant::MessageOnly, Aspect::Impact);
        cfg.max_epochs = 2;
        cfg.validation_fraction = 0.0;
        let out = train_generator(&refs, &v, &mc, &cfg).unwrap();
        assert_eq!(out.rejected, 4);
        assert_eq!(out.history.epochs.len(), 2);
        cfg.aspect_target = Some(Aspect::RootCause);
        assert!(train_generator(&refs, &v, &mc, &cfg).is_err());
    }

    #[test]
    fn batch_loss_is_permutation_invariant() {
        let rs = records();
        let v = vocab(&rs);
        let refs: Vec<&CommitRecord> = rs.iter().collect();
        let mc = ModelConfig::tiny(Architecture::TransformerClassifier, v.len(), 24);
        let cfg = TrainConfig::new(Architecture::TransformerClassifier, InputVariant::MessageOnly);
        let model = Model::new(mc, 1).unwrap();
        let mut ex = encode_classifier_examples(&model, &refs, &v, &cfg);
        let loss_fn = |m: &Model<f32>, tape: &mut Tape<'_, f32>, e: &ClassifierExample, d: &mut Option<Dropout>| {
            m.classifier_loss(tape, &e.input, e.label, d)
        };
        let a = mean_loss(&model, &ex, &loss_fn).unwrap();
        ex.reverse();
        ex.swap(0, 3);
        let b = mean_loss(&model, &ex, &loss_fn).unwrap();
        assert!((a - b).abs() < 1e-12);
    }
}
