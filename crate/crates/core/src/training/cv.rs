//! Repository-grouped k-fold driver over architectures and input variants.

use serde::Serialize;

use super::trainer::{encode_classifier_examples, train_classifier, train_generator};
use super::{mix_seed, TrainConfig};
use crate::corpus::{build_input, code_text, split_kfold, Aspect, CommitRecord, Fold, InputVariant};
use crate::decode::{decode_encoded, GenerationConfig};
use crate::error::{Error, Result};
use crate::eval::{assemble_report, auc, rouge_l, rouge_n, CellKey, EvalReport, FoldResult};
use crate::nn::{Architecture, ModelConfig};
use crate::parallel::{map_ordered, with_threads};
use crate::text::{build_vocab, decode_ids, normalize, Vocabulary};

#[derive(Debug, Clone)]
pub struct CvSettings {
    pub k: usize,
    pub seed: u64,
    pub architectures: Vec<Architecture>,
    pub variants: Vec<InputVariant>,
    /// Aspects scored for generator architectures.
    pub aspects: Vec<Aspect>,
    /// Shape template; `architecture` and `vocab_size` are filled per cell.
    pub model: ModelConfig,
    /// Optimisation template; architecture, variant, aspect and seed are
    /// filled per cell.
    pub train: TrainConfig,
    pub vocab_min_freq: usize,
    pub vocab_max_size: usize,
    pub generation: GenerationConfig,
    /// Worker threads for independent cells; `None` uses every core.
    pub jobs: Option<usize>,
}

impl CvSettings {
    pub fn new(k: usize, seed: u64, architectures: Vec<Architecture>, variants: Vec<InputVariant>) -> Self {
        let first = architectures.first().copied().unwrap_or(Architecture::TransformerClassifier);
        CvSettings {
            k,
            seed,
            architectures,
            variants,
            aspects: Aspect::ALL.to_vec(),
            model: ModelConfig::new(first, 0),
            train: TrainConfig::new(first, InputVariant::MessageAndAllCode),
            vocab_min_freq: 1,
            vocab_max_size: 20_000,
            generation: GenerationConfig::default(),
            jobs: None,
        }
    }
}

/// Patch probability assigned to one held-out record.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoredRecord {
    pub architecture: Architecture,
    pub variant: InputVariant,
    pub fold: usize,
    pub record_id: String,
    pub label: bool,
    pub score: f64,
}

/// Generated aspect for one held-out record next to its reference.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeneratedRecord {
    pub architecture: Architecture,
    pub variant: InputVariant,
    pub aspect: Aspect,
    pub fold: usize,
    pub record_id: String,
    pub generated: String,
    pub reference: String,
}

#[derive(Debug, Clone)]
pub struct CvOutcome {
    pub report: EvalReport,
    pub folds: Vec<Fold>,
    pub scores: Vec<ScoredRecord>,
    pub generations: Vec<GeneratedRecord>,
    pub models_trained: usize,
}

#[derive(Debug, Clone, Copy)]
struct Cell {
    fold: usize,
    arch_index: usize,
    architecture: Architecture,
    variant: InputVariant,
    aspect: Option<Aspect>,
}

#[derive(Default)]
struct CellOutput {
    results: Vec<FoldResult>,
    scores: Vec<ScoredRecord>,
    generations: Vec<GeneratedRecord>,
    trained: bool,
}

fn fold_vocab(records: &[&CommitRecord], settings: &CvSettings) -> Result<Vocabulary> {
    corpus_vocab(records, settings.vocab_min_freq, settings.vocab_max_size)
}

/// Vocabulary over messages, full code and aspect references. Cross
/// validation calls it on a fold's training side only.
pub fn corpus_vocab(records: &[&CommitRecord], min_freq: usize, max_size: usize) -> Result<Vocabulary> {
    let mut texts = Vec::with_capacity(records.len() * 2);
    for r in records {
        texts.push(r.message.clone());
        texts.push(code_text(&r.segments, true));
        for a in Aspect::ALL {
            if let Some(t) = r.aspect(a) {
                texts.push(t.to_string());
            }
        }
    }
    build_vocab(&texts, min_freq, max_size)
}

fn is_metric_gap(e: &Error) -> bool {
    matches!(e, Error::Metric(_))
}

fn run_cell<'a>(cell: Cell, records: &'a [CommitRecord], fold: &Fold, vocab: &Vocabulary, settings: &CvSettings) -> Result<CellOutput> {
    let mut model_config = settings.model.clone();
    model_config.architecture = cell.architecture;
    model_config.vocab_size = vocab.len();
    let mut cfg = settings.train.clone();
    cfg.architecture = cell.architecture;
    cfg.input_variant = cell.variant;
    cfg.aspect_target = cell.aspect;
    cfg.seed = mix_seed(&[settings.seed, cell.fold as u64, cell.arch_index as u64, cell.variant as u64]);
    let train = fold.train_records(records);
    let test = fold.test_records(records);
    let mut out = CellOutput::default();

    match cell.aspect {
        None => {
            let trained = train_classifier(&train, vocab, &model_config, &cfg)?;
            out.trained = true;
            let examples = encode_classifier_examples(&trained.model, &test, vocab, &cfg);
            let scores = map_ordered(&examples, |_, ex| trained.model.predict_proba(&ex.input).map(|p| p[1]))
                .into_iter()
                .collect::<Result<Vec<f64>>>()?;
            let labels: Vec<bool> = test.iter().map(|r| r.label.is_positive()).collect();
            for ((r, &score), &label) in test.iter().zip(&scores).zip(&labels) {
                out.scores.push(ScoredRecord {
                    architecture: cell.architecture,
                    variant: cell.variant,
                    fold: cell.fold,
                    record_id: r.id.clone(),
                    label,
                    score,
                });
            }
            match auc(&scores, &labels) {
                Ok(value) => out.results.push(FoldResult {
                    key: CellKey::new(cell.architecture.name(), cell.variant.name(), None, "auc"),
                    fold: cell.fold,
                    value,
                }),
                Err(e) if is_metric_gap(&e) => {}
                Err(e) => return Err(e),
            }
        }
        Some(aspect) => {
            let with_aspect = |rs: Vec<&'a CommitRecord>| -> Vec<&'a CommitRecord> {
                rs.into_iter()
                    .filter(|r| r.label.is_positive() && r.aspect(aspect).is_some_and(|t| !t.trim().is_empty()))
                    .collect()
            };
            let (train, test) = (with_aspect(train), with_aspect(test));
            if train.is_empty() {
                return Ok(out);
            }
            let trained = train_generator(&train, vocab, &model_config, &cfg)?;
            out.trained = true;
            if test.is_empty() {
                return Ok(out);
            }
            let model = &trained.model;
            let generated = map_ordered(&test, |_, r| {
                let encoded = model.encode(&build_input(r, cell.variant), vocab);
                decode_ids(&decode_encoded(model, &encoded, &settings.generation)?, vocab)
            })
            .into_iter()
            .collect::<Result<Vec<String>>>()?;
            let mut sums = [0.0f64; 3];
            for (r, text) in test.iter().zip(generated) {
                let reference = normalize(r.aspect(aspect).unwrap_or_default());
                sums[0] += rouge_n(&text, &reference, 1).f1;
                sums[1] += rouge_n(&text, &reference, 2).f1;
                sums[2] += rouge_l(&text, &reference).f1;
                out.generations.push(GeneratedRecord {
                    architecture: cell.architecture,
                    variant: cell.variant,
                    aspect,
                    fold: cell.fold,
                    record_id: r.id.clone(),
                    generated: text,
                    reference,
                });
            }
            for (metric, sum) in ["rouge-1", "rouge-2", "rouge-l"].into_iter().zip(sums) {
                out.results.push(FoldResult {
                    key: CellKey::new(cell.architecture.name(), cell.variant.name(), Some(aspect.name()), metric),
                    fold: cell.fold,
                    value: sum / test.len() as f64,
                });
            }
        }
    }
    Ok(out)
}

/// Trains and scores one model per (fold, architecture, variant[, aspect]).
/// Classifiers are trained on each fold's balanced split and scored by AUC
/// over every record of the held-out repositories; generators are trained
/// on the fold's patches carrying the aspect and scored by Rouge F1.
/// Folds whose test side cannot be scored are left missing in the report.
pub fn run_cross_validation(records: &[CommitRecord], settings: &CvSettings) -> Result<CvOutcome> {
    if settings.architectures.is_empty() || settings.variants.is_empty() {
        return Err(Error::InvalidArgument("at least one architecture and one variant are required".into()));
    }
    settings.generation.validate()?;
    let folds = split_kfold(records, settings.k, settings.seed)?;
    let vocabs = folds
        .iter()
        .map(|f| fold_vocab(&f.train_records(records), settings))
        .collect::<Result<Vec<_>>>()?;

    let mut cells = Vec::new();
    for fold in &folds {
        for (arch_index, &architecture) in settings.architectures.iter().enumerate() {
            for &variant in &settings.variants {
                let aspects: Vec<Option<Aspect>> = if architecture.is_generator() {
                    settings.aspects.iter().copied().map(Some).collect()
                } else {
                    vec![None]
                };
                for aspect in aspects {
                    cells.push(Cell {
                        fold: fold.index,
                        arch_index,
                        architecture,
                        variant,
                        aspect,
                    });
                }
            }
        }
    }

    let outputs = with_threads(settings.jobs, || {
        map_ordered(&cells, |_, cell| {
            run_cell(*cell, records, &folds[cell.fold], &vocabs[cell.fold], settings)
        })
    })?;

    let mut results = Vec::new();
    let mut scores = Vec::new();
    let mut generations = Vec::new();
    let mut models_trained = 0;
    for out in outputs {
        let out = out?;
        results.extend(out.results);
        scores.extend(out.scores);
        generations.extend(out.generations);
        models_trained += usize::from(out.trained);
    }
    let mut report = assemble_report(settings.k, &results)?;
    // Cells that produced no value at all still belong in the grid.
    for cell in &cells {
        let metrics: &[&str] = if cell.aspect.is_some() { &["rouge-1", "rouge-2", "rouge-l"] } else { &["auc"] };
        for metric in metrics {
            let key = CellKey::new(cell.architecture.name(), cell.variant.name(), cell.aspect.map(Aspect::name), *metric);
            report
                .cells
                .entry(key)
                .or_insert_with(|| crate::eval::ReportCell { folds: vec![None; settings.k] });
        }
    }
    Ok(CvOutcome {
        report,
        folds,
        scores,
        generations,
        models_trained,
    })
}
