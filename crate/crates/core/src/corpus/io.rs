//! JSONL dataset reading and writing.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::record::CommitRecord;
use crate::error::{Error, Result};

/// Parses JSONL from a reader, stopping at the first bad line. Line numbers
/// in errors are 1-based.
pub fn parse_dataset<R: Read>(reader: R) -> Result<Vec<CommitRecord>> {
    let (records, mut errors) = check_dataset(reader);
    if errors.is_empty() {
        Ok(records)
    } else {
        Err(errors.swap_remove(0))
    }
}

/// Like [`parse_dataset`] but keeps going: returns every valid record and
/// one error per rejected line, in file order.
pub fn check_dataset<R: Read>(reader: R) -> (Vec<CommitRecord>, Vec<Error>) {
    let mut records = Vec::new();
    let mut errors = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (idx, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = idx + 1;
        let at_line = |message: String| Error::DatasetLine { line: line_no, message };
        let line = match line {
            Ok(l) => l,
            Err(e) => {
                errors.push(at_line(e.to_string()));
                break;
            }
        };
        if line.trim().is_empty() {
            continue;
        }
        let mut record: CommitRecord = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(e) => {
                errors.push(at_line(e.to_string()));
                continue;
            }
        };
        record.extra.remove("segments");
        if let Err(e) = record.validate().and_then(|_| record.refresh_segments()) {
            errors.push(at_line(e.to_string()));
            continue;
        }
        if let Some(&first_line) = seen.get(&record.id) {
            errors.push(Error::DuplicateId {
                id: record.id,
                first_line,
                second_line: line_no,
            });
            continue;
        }
        seen.insert(record.id.clone(), line_no);
        records.push(record);
    }
    (records, errors)
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Vec<CommitRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(file)
}

pub fn write_dataset_to<W: Write>(records: &[CommitRecord], mut writer: W) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut writer, r)?;
        writer.write_all(b"\n").map_err(|e| Error::io("<writer>", e))?;
    }
    writer.flush().map_err(|e| Error::io("<writer>", e))
}

pub fn write_dataset(records: &[CommitRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_dataset_to(records, BufWriter::new(file)).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LanguageCount {
    pub positives: usize,
    pub negatives: usize,
}

/// Per-language positive/negative counts, languages in lexicographic order.
pub fn language_histogram(records: &[CommitRecord]) -> BTreeMap<String, LanguageCount> {
    let mut hist: BTreeMap<String, LanguageCount> = BTreeMap::new();
    for r in records {
        let lang = if r.language.is_empty() {
            "unknown".to_string()
        } else {
            r.language.clone()
        };
        let entry = hist.entry(lang).or_default();
        if r.label.is_positive() {
            entry.positives += 1;
        } else {
            entry.negatives += 1;
        }
    }
    hist
}

/// Aligned text table of [`language_histogram`] with a total row.
pub fn format_language_table(records: &[CommitRecord]) -> String {
    let hist = language_histogram(records);
    let mut out = format!("{:<12} {:>10} {:>10} {:>10}\n", "language", "patches", "non-patch", "total");
    let (mut tp, mut tn) = (0, 0);
    for (lang, c) in &hist {
        out.push_str(&format!(
            "{:<12} {:>10} {:>10} {:>10}\n",
            lang,
            c.positives,
            c.negatives,
            c.positives + c.negatives
        ));
        tp += c.positives;
        tn += c.negatives;
    }
    out.push_str(&format!("{:<12} {:>10} {:>10} {:>10}\n", "total", tp, tn, tp + tn));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{AspectSet, Label};

    fn sample(n: usize) -> Vec<CommitRecord> {
        (0..n)
            .map(|i| {
                let label = if i % 3 == 0 { Label::VulnerablePatch } else { Label::NonPatch };
                let mut r = CommitRecord::new(
                    format!("c{i}"),
                    format!("org/repo{}", i % 7),
                    format!("message {i}"),
                    format!("@@ -1 +1 @@\n-old {i}\n+new {i}\n"),
                    label,
                )
                .unwrap()
                .with_language(if i % 2 == 0 { "C" } else { "PHP" });
                if label.is_positive() {
                    r.aspects = Some(AspectSet {
                        vulnerability_type: Some("buffer overflow".into()),
                        impact: Some(format!("crash {i}")),
                        ..Default::default()
                    });
                    r.cve_ids = Some(vec![format!("CVE-2020-{i:04}")]);
                }
                r
            })
            .collect()
    }

    #[test]
    fn round_trip_hundred() {
        let records = sample(100);
        let mut buf = Vec::new();
        write_dataset_to(&records, &mut buf).unwrap();
        let back = parse_dataset(buf.as_slice()).unwrap();
        assert_eq!(back, records);
    }

    #[test]
    fn unknown_fields_preserved() {
        let line = r#"{"id":"a","repo":"r","message":"m","diff":"","label":0,"language":"C","stars":12,"meta":{"x":[1,2]}}"#;
        let records = parse_dataset(line.as_bytes()).unwrap();
        assert_eq!(records[0].extra["stars"], 12);
        let mut buf = Vec::new();
        write_dataset_to(&records, &mut buf).unwrap();
        let a: serde_json::Value = serde_json::from_str(line).unwrap();
        let b: serde_json::Value = serde_json::from_slice(&buf).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bad_json_cites_line() {
        let mut text = String::new();
        let good = r#"{"id":"ID","repo":"r","message":"m","diff":"","label":0}"#;
        for i in 1..42 {
            text.push_str(&good.replace("ID", &format!("x{i}")));
            text.push('\n');
        }
        text.push_str("{not json\n");
        match parse_dataset(text.as_bytes()) {
            Err(Error::DatasetLine { line, .. }) => assert_eq!(line, 42),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn non_patch_with_aspects_rejected() {
        let line = r#"{"id":"a","repo":"r","message":"m","diff":"","label":0,"aspects":{"impact":"crash"}}"#;
        let err = parse_dataset(line.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("must not carry aspects"), "{err}");
    }

    #[test]
    fn duplicate_id_names_both_lines() {
        let text = concat!(
            r#"{"id":"a","repo":"r","message":"m","diff":"","label":0}"#, "\n",
            r#"{"id":"b","repo":"r","message":"m","diff":"","label":0}"#, "\n",
            r#"{"id":"a","repo":"r","message":"m","diff":"","label":1}"#, "\n",
        );
        match parse_dataset(text.as_bytes()) {
            Err(Error::DuplicateId { first_line, second_line, .. }) => {
                assert_eq!((first_line, second_line), (1, 3))
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn check_reports_every_bad_line() {
        let good = |id: &str| format!(r#"{{"id":"{id}","repo":"r","message":"m","diff":"","label":0}}"#);
        let text = [good("a"), "nope".into(), good("b"), good("a"), r#"{"id":"c","repo":"r","message":"m","diff":"@@ x","label":0}"#.into()].join("\n");
        let (records, errors) = check_dataset(text.as_bytes());
        assert_eq!(records.len(), 2);
        let lines: Vec<usize> = errors
            .iter()
            .map(|e| match e {
                Error::DatasetLine { line, .. } => *line,
                Error::DuplicateId { second_line, .. } => *second_line,
                other => panic!("{other:?}"),
            })
            .collect();
        assert_eq!(lines, [2, 4, 5]);
    }

    #[test]
    fn language_counts() {
        let hist = language_histogram(&sample(10));
        // ids 0..10: positives at 0,3,6,9; C at even ids.
        assert_eq!(hist["C"], LanguageCount { positives: 2, negatives: 3 });
        assert_eq!(hist["PHP"], LanguageCount { positives: 2, negatives: 3 });
    }
}
