//! Evaluation-mode entry points for single layers, returning attention
//! weights for inspection.

use super::layers::{attention_keep_mask, CrossModelFusion, MultiHeadAttention};
use super::params::ParamStore;
use super::tape::Tape;
use super::tensor::{Matrix, Scalar};
use crate::error::{Error, Result};

/// Per head, a `targets x sources` row-stochastic matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights<T> {
    pub heads: Vec<Matrix<T>>,
}

impl<T: Scalar> AttentionWeights<T> {
    /// Largest deviation of any row sum from 1.
    pub fn max_row_sum_error(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for h in &self.heads {
            for r in 0..h.rows() {
                let s: f64 = h.row(r).iter().map(|v| v.as_f64()).sum();
                worst = worst.max((s - 1.0).abs());
            }
        }
        worst
    }

    /// Mean over heads.
    pub fn averaged(&self) -> Matrix<T> {
        let (rows, cols) = self.heads[0].shape();
        let mut out = Matrix::zeros(rows, cols);
        for h in &self.heads {
            out.add_assign(h);
        }
        out.scale_assign(T::of(1.0 / self.heads.len() as f64));
        out
    }
}

fn check_width<T: Scalar>(operand: &'static str, m: &Matrix<T>, hidden: usize) -> Result<()> {
    if m.cols() != hidden {
        return Err(Error::Shape {
            operand,
            expected: format!("{hidden} columns"),
            actual: format!("{} columns", m.cols()),
        });
    }
    Ok(())
}

fn check_mask<T: Scalar>(operand: &'static str, m: &Matrix<T>, mask: &[bool]) -> Result<()> {
    if mask.len() != m.rows() {
        return Err(Error::Shape {
            operand,
            expected: format!("{} mask entries", m.rows()),
            actual: format!("{} mask entries", mask.len()),
        });
    }
    Ok(())
}

/// Multi-head scaled dot-product attention of `queries_from` over
/// `keys_values_from`. `mask[j] == false` excludes source row `j`.
pub fn multi_head_attention<T: Scalar>(
    queries_from: &Matrix<T>,
    keys_values_from: &Matrix<T>,
    mask: &[bool],
    layer: &MultiHeadAttention,
    params: &ParamStore<T>,
) -> Result<(Matrix<T>, AttentionWeights<T>)> {
    check_width("queries_from", queries_from, layer.hidden)?;
    check_width("keys_values_from", keys_values_from, layer.hidden)?;
    check_mask("mask", keys_values_from, mask)?;
    let mut tape = Tape::new(params.values());
    let q = tape.constant(queries_from.clone());
    let kv = tape.constant(keys_values_from.clone());
    let keep = attention_keep_mask(queries_from.rows(), keys_values_from.rows(), Some(mask), false);
    let (out, weights) = layer.forward(&mut tape, q, kv, keep);
    let heads = weights.into_iter().map(|w| tape.value(w).clone()).collect();
    Ok((tape.value(out).clone(), AttentionWeights { heads }))
}

/// `text_states + Attention(Q = text_states, K = V = code_states)`.
pub fn cross_model_fuse<T: Scalar>(
    text_states: &Matrix<T>,
    code_states: &Matrix<T>,
    mask_code: &[bool],
    layer: &CrossModelFusion,
    params: &ParamStore<T>,
) -> Result<(Matrix<T>, AttentionWeights<T>)> {
    let hidden = layer.attention.hidden;
    check_width("text_states", text_states, hidden)?;
    check_width("code_states", code_states, hidden)?;
    check_mask("mask_code", code_states, mask_code)?;
    let mut tape = Tape::new(params.values());
    let t = tape.constant(text_states.clone());
    let c = tape.constant(code_states.clone());
    let (fused, weights) = layer.forward(&mut tape, t, c, mask_code, &mut None);
    let heads = weights.into_iter().map(|w| tape.value(w).clone()).collect();
    Ok((tape.value(fused).clone(), AttentionWeights { heads }))
}
