//! Append-only JSONL event log of alerts and verdicts, replayed on open.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use vpsn_core::corpus::{Aspect, AspectSet};

use crate::predictor::Prediction;

/// Diff lines kept on an alert.
pub const DIFF_EXCERPT_LINES: usize = 200;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("unknown alert {0:?}")]
    UnknownAlert(String),
    #[error("alert {0:?} already has a verdict")]
    AlreadyJudged(String),
    #[error("invalid verdict: {0}")]
    Invalid(String),
    #[error("{path}:{line}: {message}")]
    Corrupt { path: PathBuf, line: usize, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlertItem {
    pub alert_id: String,
    #[serde(default)]
    pub repo: Option<String>,
    pub message: String,
    pub diff_excerpt: String,
    pub probability: f64,
    pub label: u8,
    pub aspects: AspectSet,
    pub explanation: Option<String>,
    /// Milliseconds since the Unix epoch, strictly increasing per store.
    pub created_at: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictKind {
    TruePositive,
    FalsePositive,
    Unsure,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Verdict {
    pub alert_id: String,
    pub verdict: VerdictKind,
    /// 1 (easy) to 5 (hard).
    #[serde(default)]
    pub difficulty: Option<u8>,
    /// 1 to 5 per aspect.
    #[serde(default)]
    pub usefulness: BTreeMap<Aspect, u8>,
    pub elapsed_ms: u64,
    #[serde(default)]
    pub analyst: Option<String>,
}

impl Verdict {
    pub fn validate(&self) -> Result<(), StoreError> {
        let likert = |name: String, v: u8| {
            if (1..=5).contains(&v) {
                Ok(())
            } else {
                Err(StoreError::Invalid(format!("{name} must be between 1 and 5, got {v}")))
            }
        };
        if let Some(d) = self.difficulty {
            likert("difficulty".into(), d)?;
        }
        for (aspect, &v) in &self.usefulness {
            likert(format!("usefulness.{aspect}"), v)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerdictRecord {
    #[serde(flatten)]
    pub verdict: Verdict,
    pub recorded_at: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum Event {
    Alert(AlertItem),
    Verdict { verdict: Verdict, recorded_at: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QueueStatus {
    Pending,
    Judged,
    All,
}

impl std::str::FromStr for QueueStatus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "pending" => Ok(QueueStatus::Pending),
            "judged" => Ok(QueueStatus::Judged),
            "all" => Ok(QueueStatus::All),
            other => Err(format!("status must be pending, judged or all, got {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueueItem {
    #[serde(flatten)]
    pub alert: AlertItem,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verdict: Option<VerdictRecord>,
}

/// Likert counts for ratings 1..=5, plus verdicts that gave no rating.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Histogram {
    pub counts: [usize; 5],
    pub unrated: usize,
}

impl Histogram {
    fn add(&mut self, rating: Option<u8>) {
        match rating {
            Some(r) => self.counts[usize::from(r) - 1] += 1,
            None => self.unrated += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum::<usize>() + self.unrated
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerdictCounts {
    pub true_positive: usize,
    pub false_positive: usize,
    pub unsure: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub alerts: usize,
    pub pending: usize,
    pub judged: usize,
    pub verdicts: VerdictCounts,
    /// 0 when nothing has been judged.
    pub mean_elapsed_ms: f64,
    pub difficulty: Histogram,
    pub usefulness: BTreeMap<Aspect, Histogram>,
}

#[derive(Debug)]
pub struct AlertStore {
    path: PathBuf,
    file: File,
    alerts: Vec<AlertItem>,
    index: HashMap<String, usize>,
    verdicts: HashMap<String, VerdictRecord>,
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

fn excerpt(diff: &str) -> String {
    let mut out = String::new();
    for (i, line) in diff.split_inclusive('\n').enumerate() {
        if i == DIFF_EXCERPT_LINES {
            break;
        }
        out.push_str(line);
    }
    out
}

impl AlertStore {
    /// Opens (creating if needed) and replays the log. A torn final line
    /// from an interrupted append is cut off; any other bad line is an error.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let path = path.as_ref().to_path_buf();
        let io = |source| StoreError::Io { path: path.clone(), source };
        let file = OpenOptions::new().create(true).read(true).append(true).open(&path).map_err(io)?;
        let mut store = AlertStore {
            path: path.clone(),
            file,
            alerts: Vec::new(),
            index: HashMap::new(),
            verdicts: HashMap::new(),
        };
        let mut reader = BufReader::new(File::open(&path).map_err(io)?);
        let mut good_len = 0u64;
        let mut line_no = 0;
        let mut buf = String::new();
        loop {
            buf.clear();
            let n = reader.read_line(&mut buf).map_err(io)?;
            if n == 0 {
                break;
            }
            line_no += 1;
            let complete = buf.ends_with('\n');
            if buf.trim().is_empty() {
                good_len += n as u64;
                continue;
            }
            match serde_json::from_str::<Event>(buf.trim_end()) {
                Ok(event) => {
                    store.apply(event).map_err(|e| StoreError::Corrupt {
                        path: path.clone(),
                        line: line_no,
                        message: e.to_string(),
                    })?;
                    if !complete {
                        store.file.write_all(b"\n").map_err(io)?;
                    }
                }
                Err(_) if !complete => {
                    store.file.set_len(good_len).map_err(io)?;
                    break;
                }
                Err(e) => {
                    return Err(StoreError::Corrupt {
                        path: path.clone(),
                        line: line_no,
                        message: e.to_string(),
                    })
                }
            }
            good_len += n as u64;
        }
        Ok(store)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn apply(&mut self, event: Event) -> Result<(), StoreError> {
        match event {
            Event::Alert(alert) => {
                if self.index.contains_key(&alert.alert_id) {
                    return Err(StoreError::Invalid(format!("duplicate alert {:?}", alert.alert_id)));
                }
                self.index.insert(alert.alert_id.clone(), self.alerts.len());
                self.alerts.push(alert);
            }
            Event::Verdict { verdict, recorded_at } => {
                self.check_verdict(&verdict)?;
                self.verdicts
                    .insert(verdict.alert_id.clone(), VerdictRecord { verdict, recorded_at });
            }
        }
        Ok(())
    }

    fn check_verdict(&self, verdict: &Verdict) -> Result<(), StoreError> {
        verdict.validate()?;
        if !self.index.contains_key(&verdict.alert_id) {
            return Err(StoreError::UnknownAlert(verdict.alert_id.clone()));
        }
        if self.verdicts.contains_key(&verdict.alert_id) {
            return Err(StoreError::AlreadyJudged(verdict.alert_id.clone()));
        }
        Ok(())
    }

    fn append(&mut self, event: &Event) -> Result<(), StoreError> {
        let mut line = serde_json::to_string(event).expect("events serialize");
        line.push('\n');
        let io = |source| StoreError::Io { path: self.path.clone(), source };
        self.file.write_all(line.as_bytes()).map_err(io)?;
        self.file.sync_data().map_err(io)
    }

    pub fn add_alert(&mut self, repo: Option<String>, message: &str, diff: &str, prediction: Prediction) -> Result<AlertItem, StoreError> {
        let created_at = now_ms().max(self.alerts.last().map_or(0, |a| a.created_at + 1));
        let alert = AlertItem {
            alert_id: format!("alert-{:06}", self.alerts.len() + 1),
            repo,
            message: message.to_string(),
            diff_excerpt: excerpt(diff),
            probability: prediction.probability,
            label: prediction.label,
            aspects: prediction.aspects,
            explanation: prediction.explanation,
            created_at,
        };
        let event = Event::Alert(alert.clone());
        self.append(&event)?;
        self.apply(event)?;
        Ok(alert)
    }

    pub fn record_verdict(&mut self, verdict: Verdict) -> Result<VerdictRecord, StoreError> {
        self.check_verdict(&verdict)?;
        let recorded_at = now_ms();
        let event = Event::Verdict { verdict: verdict.clone(), recorded_at };
        self.append(&event)?;
        self.apply(event)?;
        Ok(VerdictRecord { verdict, recorded_at })
    }

    pub fn get(&self, alert_id: &str) -> Option<&AlertItem> {
        self.index.get(alert_id).map(|&i| &self.alerts[i])
    }

    pub fn verdict(&self, alert_id: &str) -> Option<&VerdictRecord> {
        self.verdicts.get(alert_id)
    }

    pub fn len(&self) -> usize {
        self.alerts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alerts.is_empty()
    }

    /// Newest first.
    pub fn queue(&self, status: QueueStatus) -> Vec<QueueItem> {
        self.alerts
            .iter()
            .rev()
            .filter_map(|a| {
                let verdict = self.verdicts.get(&a.alert_id).cloned();
                let keep = match status {
                    QueueStatus::Pending => verdict.is_none(),
                    QueueStatus::Judged => verdict.is_some(),
                    QueueStatus::All => true,
                };
                keep.then(|| QueueItem { alert: a.clone(), verdict })
            })
            .collect()
    }

    pub fn stats(&self) -> Stats {
        let mut counts = VerdictCounts::default();
        let mut difficulty = Histogram::default();
        let mut usefulness: BTreeMap<Aspect, Histogram> = Aspect::ALL.iter().map(|a| (*a, Histogram::default())).collect();
        let mut elapsed = 0u128;
        for record in self.verdicts.values() {
            let v = &record.verdict;
            match v.verdict {
                VerdictKind::TruePositive => counts.true_positive += 1,
                VerdictKind::FalsePositive => counts.false_positive += 1,
                VerdictKind::Unsure => counts.unsure += 1,
            }
            difficulty.add(v.difficulty);
            for (aspect, hist) in usefulness.iter_mut() {
                hist.add(v.usefulness.get(aspect).copied());
            }
            elapsed += u128::from(v.elapsed_ms);
        }
        let judged = self.verdicts.len();
        Stats {
            alerts: self.alerts.len(),
            pending: self.alerts.len() - judged,
            judged,
            verdicts: counts,
            mean_elapsed_ms: if judged == 0 { 0.0 } else { elapsed as f64 / judged as f64 },
            difficulty,
            usefulness,
        }
    }
}
