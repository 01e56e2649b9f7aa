//! AUC, Rouge-1/2/L and cross-validation report assembly.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Area under the ROC curve, Mann–Whitney form: ties between a positive and
/// a negative count half.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Metric(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(s) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::Metric(format!("score {s} is not comparable")));
    }
    let positives = labels.iter().filter(|&&l| l).count() as u64;
    let negatives = labels.len() as u64 - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::Metric("AUC needs both positive and negative labels".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the rank sum of the positives, with tied groups sharing their
    // average rank; doubling keeps it integral.
    let mut twice_rank_sum: u64 = 0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let twice_avg_rank = (start + 1 + end) as u64;
        let pos_in_group = order[start..end].iter().filter(|&&i| labels[i]).count() as u64;
        twice_rank_sum += twice_avg_rank * pos_in_group;
        start = end;
    }
    let twice_u = twice_rank_sum - positives * (positives + 1);
    Ok(twice_u as f64 / (2 * positives * negatives) as f64)
}

/// Precision, recall and F1 on a 0–100 scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl RougeScore {
    pub const ZERO: RougeScore = RougeScore {
        precision: 0.0,
        recall: 0.0,
        f1: 0.0,
    };

    fn from_counts(overlap: usize, candidate: usize, reference: usize) -> Self {
        if overlap == 0 || candidate == 0 || reference == 0 {
            return RougeScore::ZERO;
        }
        RougeScore {
            precision: 100.0 * overlap as f64 / candidate as f64,
            recall: 100.0 * overlap as f64 / reference as f64,
            f1: 100.0 * (2 * overlap) as f64 / (candidate + reference) as f64,
        }
    }
}

/// Lowercased whitespace tokens with punctuation trimmed from both ends;
/// tokens that were all punctuation disappear.
pub fn rouge_tokens(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|t| t.trim_matches(|c: char| c.is_ascii_punctuation()).to_lowercase())
        .filter(|t| !t.is_empty())
        .collect()
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

pub fn rouge_n_tokens(candidate: &[String], reference: &[String], n: usize) -> RougeScore {
    assert!(n >= 1, "rouge_n needs n >= 1");
    let c = ngram_counts(candidate, n);
    let r = ngram_counts(reference, n);
    let overlap = c
        .iter()
        .map(|(g, &k)| k.min(r.get(g).copied().unwrap_or(0)))
        .sum();
    RougeScore::from_counts(overlap, c.values().sum(), r.values().sum())
}

pub fn rouge_n(candidate: &str, reference: &str, n: usize) -> RougeScore {
    rouge_n_tokens(&rouge_tokens(candidate), &rouge_tokens(reference), n)
}

pub fn lcs_len<S: PartialEq>(a: &[S], b: &[S]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn rouge_l_tokens(candidate: &[String], reference: &[String]) -> RougeScore {
    RougeScore::from_counts(lcs_len(candidate, reference), candidate.len(), reference.len())
}

pub fn rouge_l(candidate: &str, reference: &str) -> RougeScore {
    rouge_l_tokens(&rouge_tokens(candidate), &rouge_tokens(reference))
}

/// Row key of a report cell. `aspect` is `-` for classification metrics.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellKey {
    pub architecture: String,
    pub variant: String,
    pub aspect: String,
    pub metric: String,
}

impl CellKey {
    pub fn new(architecture: impl Into<String>, variant: impl Into<String>, aspect: Option<&str>, metric: impl Into<String>) -> Self {
        CellKey {
            architecture: architecture.into(),
            variant: variant.into(),
            aspect: aspect.unwrap_or(NO_ASPECT).to_string(),
            metric: metric.into(),
        }
    }
}

pub const NO_ASPECT: &str = "-";

/// One metric value for one fold of one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub key: CellKey,
    pub fold: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportCell {
    /// `None` marks a fold that produced no value.
    pub folds: Vec<Option<f64>>,
}

impl ReportCell {
    pub fn is_complete(&self) -> bool {
        self.folds.iter().all(Option::is_some)
    }

    fn complete_values(&self) -> Option<Vec<f64>> {
        self.folds.iter().copied().collect()
    }

    /// Mean over folds; `None` when any fold is missing.
    pub fn mean(&self) -> Option<f64> {
        let v = self.complete_values()?;
        if v.is_empty() {
            return None;
        }
        Some(v.iter().sum::<f64>() / v.len() as f64)
    }

    /// Sample standard deviation; 0 for a single fold, `None` when incomplete.
    pub fn stdev(&self) -> Option<f64> {
        let v = self.complete_values()?;
        let mean = self.mean()?;
        if v.len() < 2 {
            return Some(0.0);
        }
        let ss: f64 = v.iter().map(|x| (x - mean) * (x - mean)).sum();
        Some((ss / (v.len() - 1) as f64).sqrt())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub k: usize,
    pub cells: BTreeMap<CellKey, ReportCell>,
}

pub const INCOMPLETE: &str = "incomplete";
pub const MISSING: &str = "NA";

fn check_range(key: &CellKey, value: f64) -> Result<()> {
    let max = if key.metric.eq_ignore_ascii_case("auc") { 1.0 } else { 100.0 };
    if !(0.0..=max).contains(&value) {
        return Err(Error::Metric(format!(
            "{} value {value} outside [0, {max}] for {}/{}",
            key.metric, key.architecture, key.variant
        )));
    }
    Ok(())
}

/// Groups per-fold values into cells. Folds never reported stay `None`, so
/// the cell is flagged incomplete instead of being averaged over fewer folds.
pub fn assemble_report(k: usize, results: &[FoldResult]) -> Result<EvalReport> {
    let mut cells: BTreeMap<CellKey, ReportCell> = BTreeMap::new();
    for r in results {
        if r.fold >= k {
            return Err(Error::Metric(format!("fold {} out of range for k = {k}", r.fold)));
        }
        check_range(&r.key, r.value)?;
        let cell = cells
            .entry(r.key.clone())
            .or_insert_with(|| ReportCell { folds: vec![None; k] });
        if cell.folds[r.fold].replace(r.value).is_some() {
            return Err(Error::Metric(format!(
                "fold {} reported twice for {:?}",
                r.fold, r.key
            )));
        }
    }
    Ok(EvalReport { k, cells })
}

fn fmt_value(v: f64) -> String {
    // Shortest representation that parses back to the same f64.
    format!("{v:?}")
}

impl EvalReport {
    pub fn is_complete(&self) -> bool {
        self.cells.values().all(ReportCell::is_complete)
    }

    pub fn architectures(&self) -> BTreeSet<&str> {
        self.cells.keys().map(|k| k.architecture.as_str()).collect()
    }

    pub fn variants(&self) -> BTreeSet<&str> {
        self.cells.keys().map(|k| k.variant.as_str()).collect()
    }

    pub fn get(&self, architecture: &str, variant: &str, aspect: Option<&str>, metric: &str) -> Option<&ReportCell> {
        self.cells.get(&CellKey::new(architecture, variant, aspect, metric))
    }

    /// CSV with one row per fold plus `mean` and `stdev` summary rows.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["architecture", "variant", "aspect", "metric", "fold", "value"])?;
        for (key, cell) in &self.cells {
            let row = |fold: String, value: String| {
                [
                    key.architecture.clone(),
                    key.variant.clone(),
                    key.aspect.clone(),
                    key.metric.clone(),
                    fold,
                    value,
                ]
            };
            for (i, v) in cell.folds.iter().enumerate() {
                w.write_record(row(i.to_string(), v.map_or_else(|| MISSING.to_string(), fmt_value)))?;
            }
            let summary = |v: Option<f64>| v.map_or_else(|| INCOMPLETE.to_string(), fmt_value);
            w.write_record(row("mean".into(), summary(cell.mean())))?;
            w.write_record(row("stdev".into(), summary(cell.stdev())))?;
        }
        w.flush().map_err(|e| Error::io("<report csv>", e))?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is UTF-8"))
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    /// Parses [`EvalReport::write_csv`] output. Summary rows are recomputed
    /// rather than trusted; `k` is the number of distinct fold indices.
    pub fn read_csv<R: Read>(reader: R) -> Result<EvalReport> {
        let mut rdr = csv::Reader::from_reader(reader);
        let mut results = Vec::new();
        let mut k = 0;
        let mut keys = BTreeSet::new();
        for row in rdr.records() {
            let row = row?;
            if row.len() != 6 {
                return Err(Error::Metric(format!("report row has {} columns, expected 6", row.len())));
            }
            let key = CellKey {
                architecture: row[0].to_string(),
                variant: row[1].to_string(),
                aspect: row[2].to_string(),
                metric: row[3].to_string(),
            };
            keys.insert(key.clone());
            if matches!(&row[4], "mean" | "stdev") {
                continue;
            }
            let fold: usize = row[4]
                .parse()
                .map_err(|_| Error::Metric(format!("bad fold column {:?}", &row[4])))?;
            k = k.max(fold + 1);
            if &row[5] == MISSING {
                continue;
            }
            let value: f64 = row[5]
                .parse()
                .map_err(|_| Error::Metric(format!("bad value column {:?}", &row[5])))?;
            results.push(FoldResult { key, fold, value });
        }
        let mut report = assemble_report(k, &results)?;
        for key in keys {
            report
                .cells
                .entry(key)
                .or_insert_with(|| ReportCell { folds: vec![None; k] });
        }
        Ok(report)
    }

    /// Aligned table: one row per (architecture, aspect, metric), one column
    /// per input variant, cells as `mean ± stdev` or `incomplete`.
    pub fn format_table(&self) -> String {
        let variants: Vec<&str> = self.variants().into_iter().collect();
        let mut rows: BTreeMap<(&str, &str, &str), BTreeMap<&str, String>> = BTreeMap::new();
        for (key, cell) in &self.cells {
            let text = match (cell.mean(), cell.stdev()) {
                (Some(m), Some(s)) => format!("{m:.4} ± {s:.4}"),
                _ => INCOMPLETE.to_string(),
            };
            rows.entry((&key.architecture, &key.aspect, &key.metric))
                .or_default()
                .insert(&key.variant, text);
        }
        let mut header = vec!["architecture".to_string(), "aspect".into(), "metric".into()];
        header.extend(variants.iter().map(|v| v.to_string()));
        let mut table = vec![header];
        for ((arch, aspect, metric), by_variant) in rows {
            let mut line = vec![arch.to_string(), aspect.to_string(), metric.to_string()];
            line.extend(variants.iter().map(|v| by_variant.get(v).cloned().unwrap_or_default()));
            table.push(line);
        }
        let widths: Vec<usize> = (0..table[0].len())
            .map(|c| table.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for (i, row) in table.iter().enumerate() {
            let cells: Vec<String> = row
                .iter()
                .zip(&widths)
                .map(|(cell, w)| format!("{cell:<w$}"))
                .collect();
            let _ = writeln!(out, "{}", cells.join("  ").trim_end());
            if i == 0 {
                let _ = writeln!(out, "{}", widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("  "));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pairwise_auc(scores: &[f64], labels: &[bool]) -> f64 {
        let mut credit = 0.0;
        let mut pairs = 0.0;
        for (i, &li) in labels.iter().enumerate() {
            for (j, &lj) in labels.iter().enumerate() {
                if li && !lj {
                    pairs += 1.0;
                    if scores[i] > scores[j] {
                        credit += 1.0;
                    } else if scores[i] == scores[j] {
                        credit += 0.5;
                    }
                }
            }
        }
        credit / pairs
    }

    #[test]
    fn auc_worked_examples() {
        assert_eq!(auc(&[0.9, 0.8, 0.3, 0.2], &[true, false, true, false]).unwrap(), 0.75);
        assert_eq!(auc(&[0.9, 0.8, 0.1], &[true, true, false]).unwrap(), 1.0);
        assert_eq!(auc(&[0.4; 6], &[true, false, true, false, false, true]).unwrap(), 0.5);
        assert!(auc(&[0.1, 0.2], &[true, true]).is_err());
        assert!(auc(&[0.1], &[true, false]).is_err());
    }

    #[test]
    fn rouge_worked_examples() {
        let s = rouge_n("improper input validation", "improper input validation", 2);
        assert_eq!((s.precision, s.recall, s.f1), (100.0, 100.0, 100.0));
        let s = rouge_n("cross site scripting", "cross site scripting vulnerability", 1);
        assert_eq!((s.precision, s.recall), (100.0, 75.0));
        assert!((s.f1 - 85.714_285).abs() < 1e-4);
        assert_eq!(rouge_n("a b", "c d", 1), RougeScore::ZERO);
        let l = rouge_l("a b c d", "a c b d");
        assert_eq!((l.precision, l.recall, l.f1), (75.0, 75.0, 75.0));
        assert_eq!(rouge_l("", "a b"), RougeScore::ZERO);
    }

    #[test]
    fn rouge_tokenization() {
        assert_eq!(rouge_tokens("Steal the victim's Cookie, (quickly)!"), vec!["steal", "the", "victim's", "cookie", "quickly"]);
        assert_eq!(rouge_tokens("cross - site"), vec!["cross", "site"]);
    }

    fn cell(k: usize, values: &[(usize, f64)]) -> EvalReport {
        let key = CellKey::new("transformer-classifier", "message-only", None, "auc");
        let results: Vec<FoldResult> = values
            .iter()
            .map(|&(fold, value)| FoldResult { key: key.clone(), fold, value })
            .collect();
        assemble_report(k, &results).unwrap()
    }

    #[test]
    fn equal_folds_have_zero_stdev() {
        let r = cell(5, &[(0, 0.7), (1, 0.7), (2, 0.7), (3, 0.7), (4, 0.7)]);
        let c = r.cells.values().next().unwrap();
        assert!((c.mean().unwrap() - 0.7).abs() < 1e-12);
        assert_eq!(c.stdev().unwrap(), 0.0);
    }

    #[test]
    fn missing_fold_marks_incomplete() {
        let r = cell(5, &[(0, 0.7), (1, 0.6), (3, 0.7), (4, 0.9)]);
        assert!(!r.is_complete());
        let csv = r.to_csv_string().unwrap();
        assert!(csv.contains(",2,NA"));
        assert!(csv.contains(",mean,incomplete"));
        assert!(r.format_table().contains("incomplete"));
    }

    #[test]
    fn csv_round_trip() {
        let mut results = Vec::new();
        for (ai, arch) in ["lstm-classifier", "transformer-classifier"].iter().enumerate() {
            for (vi, variant) in ["message-only", "all-code-only"].iter().enumerate() {
                for fold in 0..5 {
                    if ai == 1 && vi == 1 && fold == 3 {
                        continue;
                    }
                    results.push(FoldResult {
                        key: CellKey::new(*arch, *variant, None, "auc"),
                        fold,
                        value: 0.1 + 0.123456789 * (fold + vi) as f64 / 7.0,
                    });
                }
            }
        }
        results.push(FoldResult {
            key: CellKey::new("seq2seq-generator", "message-only", Some("impact"), "rouge-l"),
            fold: 0,
            value: 42.5,
        });
        let report = assemble_report(5, &results).unwrap();
        let csv = report.to_csv_string().unwrap();
        let back = EvalReport::read_csv(csv.as_bytes()).unwrap();
        assert_eq!(back, report);
        assert_eq!(back.to_csv_string().unwrap(), csv);
    }

    #[test]
    fn out_of_range_values_rejected() {
        let key = CellKey::new("a", "v", None, "auc");
        assert!(assemble_report(2, &[FoldResult { key, fold: 0, value: 1.5 }]).is_err());
    }

    #[test]
    fn table_has_variant_columns() {
        let r = cell(1, &[(0, 0.5)]);
        let t = r.format_table();
        assert!(t.lines().next().unwrap().contains("message-only"));
    }

    proptest! {
        #[test]
        fn auc_matches_pairwise(data in proptest::collection::vec((0u8..6, any::<bool>()), 2..12)) {
            let scores: Vec<f64> = data.iter().map(|(s, _)| *s as f64 / 5.0).collect();
            let labels: Vec<bool> = data.iter().map(|(_, l)| *l).collect();
            let both = labels.iter().any(|&l| l) && labels.iter().any(|&l| !l);
            prop_assume!(both);
            prop_assert_eq!(auc(&scores, &labels).unwrap(), pairwise_auc(&scores, &labels));
        }

        #[test]
        fn rouge_properties(a in proptest::collection::vec(0u8..5, 0..10), b in proptest::collection::vec(0u8..5, 0..10), n in 1usize..4) {
            let ta: Vec<String> = a.iter().map(|x| format!("w{x}")).collect();
            let tb: Vec<String> = b.iter().map(|x| format!("w{x}")).collect();
            if ta.len() >= n {
                let s = rouge_n_tokens(&ta, &ta, n);
                prop_assert_eq!((s.precision, s.recall, s.f1), (100.0, 100.0, 100.0));
            }
            let ab = rouge_n_tokens(&ta, &tb, n);
            let ba = rouge_n_tokens(&tb, &ta, n);
            prop_assert_eq!((ab.precision, ab.recall, ab.f1), (ba.recall, ba.precision, ba.f1));
            prop_assert!(rouge_l_tokens(&ta, &tb).f1 <= rouge_n_tokens(&ta, &tb, 1).f1);
        }
    }
}
