//! Standalone cross-entropy on plain values. The tape has its own
//! differentiable version; this one scores predictions after the fact.

use crate::error::{Error, Result};
use crate::text::PAD;

/// Per-position model outputs.
#[derive(Debug, Clone, Copy)]
pub enum Prediction<'a> {
    Logits(&'a [Vec<f64>]),
    Probabilities(&'a [Vec<f64>]),
}

impl Prediction<'_> {
    fn rows(&self) -> &[Vec<f64>] {
        match self {
            Prediction::Logits(r) | Prediction::Probabilities(r) => r,
        }
    }
}

/// Token targets with PAD positions masked out.
pub fn pad_targets(ids: &[usize]) -> Vec<Option<usize>> {
    ids.iter().map(|&t| (t != PAD).then_some(t)).collect()
}

/// Mean negative log-likelihood over the unmasked (`Some`) targets.
pub fn cross_entropy(prediction: Prediction<'_>, targets: &[Option<usize>]) -> Result<f64> {
    let rows = prediction.rows();
    if rows.len() != targets.len() {
        return Err(Error::Shape {
            operand: "targets",
            expected: rows.len().to_string(),
            actual: targets.len().to_string(),
        });
    }
    let mut total = 0.0;
    let mut counted = 0usize;
    for (row, target) in rows.iter().zip(targets) {
        let Some(t) = *target else { continue };
        if t >= row.len() {
            return Err(Error::TokenOutOfRange { id: t, size: row.len() });
        }
        total += match prediction {
            Prediction::Probabilities(_) => -row[t].ln(),
            Prediction::Logits(_) => {
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let log_z = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                log_z - row[t]
            }
        };
        counted += 1;
    }
    if counted == 0 {
        return Err(Error::Training("every target position is masked".into()));
    }
    Ok(total / counted as f64)
}
