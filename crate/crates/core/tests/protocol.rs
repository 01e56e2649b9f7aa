use std::collections::{BTreeMap, BTreeSet};

use vpsn_core::corpus::{split_kfold, synthetic_corpus, Aspect, CommitRecord, Fold, InputVariant};
use vpsn_core::decode::GenerationConfig;
use vpsn_core::eval::NO_ASPECT;
use vpsn_core::nn::{Architecture, ModelConfig};
use vpsn_core::training::{run_cross_validation, CvOutcome, CvSettings};

fn assert_folds_sound(records: &[CommitRecord], folds: &[Fold]) {
    let mut seen_test = BTreeSet::new();
    for f in folds {
        let pos = f.train.iter().filter(|&&i| records[i].label.is_positive()).count();
        assert_eq!(pos * 2, f.train.len(), "fold {} train is unbalanced", f.index);
        for &i in &f.train {
            assert!(!f.test_repos.contains(&records[i].repo), "fold {} trains on a test repo", f.index);
        }
        for &i in &f.test {
            assert!(f.test_repos.contains(&records[i].repo));
            assert!(seen_test.insert(i), "record {i} tested twice");
        }
        for other in folds.iter().filter(|o| o.index != f.index) {
            assert!(f.test_repos.is_disjoint(&other.test_repos));
        }
    }
    assert_eq!(seen_test.len(), records.len());
}

fn small_settings(k: usize, architectures: Vec<Architecture>, variants: Vec<InputVariant>) -> CvSettings {
    let mut s = CvSettings::new(k, 11, architectures, variants);
    s.model = ModelConfig::tiny(Architecture::TransformerClassifier, 0, 48);
    s.model.num_heads = 2;
    s.train.learning_rate = Some(1e-3);
    s.train.max_epochs = 2;
    s.train.batch_size = 16;
    s.generation = GenerationConfig { max_new_tokens: 8, ..GenerationConfig::default() };
    s
}

fn scored_once(records: &[CommitRecord], outcome: &CvOutcome) {
    let mut counts: BTreeMap<(Architecture, InputVariant), BTreeMap<&str, usize>> = BTreeMap::new();
    for s in &outcome.scores {
        *counts.entry((s.architecture, s.variant)).or_default().entry(&s.record_id).or_default() += 1;
        assert!((0.0..=1.0).contains(&s.score));
    }
    for per_record in counts.values() {
        assert_eq!(per_record.len(), records.len());
        assert!(per_record.values().all(|&c| c == 1));
    }
}

#[test]
fn classifier_cross_validation_keeps_protocol() {
    let records = synthetic_corpus(120, 12, 5);
    let settings = small_settings(
        3,
        vec![Architecture::LstmClassifier, Architecture::DualEncoderFusionClassifier],
        vec![InputVariant::MessageOnly, InputVariant::MessageAndAllCode],
    );
    let outcome = run_cross_validation(&records, &settings).unwrap();
    assert_folds_sound(&records, &outcome.folds);
    assert_eq!(outcome.folds, split_kfold(&records, 3, 11).unwrap());
    assert_eq!(outcome.models_trained, 3 * 2 * 2);
    scored_once(&records, &outcome);
    assert_eq!(outcome.report.cells.len(), 4);
    for cell in outcome.report.cells.values() {
        assert!(cell.is_complete());
        assert!(cell.folds.iter().flatten().all(|v| (0.0..=1.0).contains(v)));
    }
    let again = run_cross_validation(&records, &settings).unwrap();
    assert_eq!(again.report, outcome.report);
    assert_eq!(again.scores, outcome.scores);
}

#[test]
fn generator_cross_validation_scores_each_aspect() {
    let records = synthetic_corpus(80, 8, 6);
    let mut settings = small_settings(2, vec![Architecture::Seq2SeqGenerator], vec![InputVariant::MessageAndChangedCode]);
    settings.aspects = vec![Aspect::VulnerabilityType, Aspect::Impact];
    let outcome = run_cross_validation(&records, &settings).unwrap();
    assert_eq!(outcome.models_trained, 2 * 2);
    let positives = records.iter().filter(|r| r.label.is_positive()).count();
    assert_eq!(outcome.generations.len(), positives * 2);
    for g in &outcome.generations {
        assert!(g.generated.split_whitespace().count() <= 8);
    }
    assert_eq!(outcome.report.cells.len(), 2 * 3);
    for (key, cell) in &outcome.report.cells {
        assert_ne!(key.aspect, NO_ASPECT);
        assert!(cell.is_complete());
        assert!(cell.folds.iter().flatten().all(|v| (0.0..=100.0).contains(v)));
    }
}

#[test]
fn grid_lists_every_variant() {
    let records = synthetic_corpus(60, 6, 2);
    let mut settings = small_settings(2, vec![Architecture::LstmClassifier], InputVariant::ALL.to_vec());
    settings.train.max_epochs = 1;
    let outcome = run_cross_validation(&records, &settings).unwrap();
    let variants: Vec<&str> = outcome.report.variants().into_iter().collect();
    let mut expected: Vec<&str> = InputVariant::ALL.iter().map(|v| v.name()).collect();
    expected.sort_unstable();
    assert_eq!(variants, expected);
    let table = outcome.report.format_table();
    for v in InputVariant::ALL {
        assert!(table.contains(v.name()), "{table}");
    }
}

#[test]
fn too_few_repositories_is_an_error() {
    let records = synthetic_corpus(40, 2, 1);
    let settings = small_settings(5, vec![Architecture::LstmClassifier], vec![InputVariant::MessageOnly]);
    assert!(run_cross_validation(&records, &settings).is_err());
}
