//! Browser bindings for the demo page in `www/`.
//!
//! Each export takes plain strings and returns a JSON string; the `*_value`
//! twins return `serde_json::Value` so native tests can call them directly.

use serde_json::{json, Value};
use vpsn_core::corpus::{build_input_from_parts, parse_unified_diff, AspectSet, InputVariant};
use vpsn_core::decode::render_explanation;
use vpsn_core::eval::{auc, rouge_l, rouge_n, RougeScore};
use vpsn_core::nn::{Architecture, Model, ModelConfig};
use vpsn_core::text::{build_vocab, tokenize, Vocabulary};
use wasm_bindgen::prelude::*;

/// Token budget per sequence in the heatmap model.
pub const HEATMAP_SEQ_LEN: usize = 48;

fn to_js(v: Result<Value, String>) -> Result<String, JsError> {
    v.map(|v| v.to_string()).map_err(|e| JsError::new(&e))
}

/// Splits a unified diff into added / deleted / context lines and shows
/// the text each of the five input variants would feed a model.
#[wasm_bindgen]
pub fn decompose(message: &str, diff: &str) -> Result<String, JsError> {
    to_js(decompose_value(message, diff))
}

pub fn decompose_value(message: &str, diff: &str) -> Result<Value, String> {
    let segments = parse_unified_diff(diff).map_err(|e| e.to_string())?;
    let variants: Vec<Value> = InputVariant::ALL
        .iter()
        .map(|&v| {
            let input = build_input_from_parts(message, &segments, v);
            json!({
                "name": v.name(),
                "message_text": input.message_text,
                "code_text": input.code_text,
                "tokens": tokenize(&input.message_text).len() + tokenize(&input.code_text).len(),
            })
        })
        .collect();
    Ok(json!({
        "added": segments.added,
        "deleted": segments.deleted,
        "unchanged": segments.unchanged,
        "variants": variants,
    }))
}

fn label(vocab: &Vocabulary, id: usize) -> String {
    vocab.token(id).unwrap_or("?").to_string()
}

/// Cross-model attention of message tokens over code tokens in a freshly
/// initialised (untrained) dual-encoder fusion classifier, averaged over heads.
#[wasm_bindgen]
pub fn fusion_heatmap(message: &str, diff: &str, heads: usize, seed: u32) -> Result<String, JsError> {
    to_js(fusion_heatmap_value(message, diff, heads, seed as u64))
}

pub fn fusion_heatmap_value(message: &str, diff: &str, heads: usize, seed: u64) -> Result<Value, String> {
    let segments = parse_unified_diff(diff).map_err(|e| e.to_string())?;
    let input = build_input_from_parts(message, &segments, InputVariant::MessageAndAllCode);
    let vocab = build_vocab(&[&input.message_text, &input.code_text], 1, 10_000).map_err(|e| e.to_string())?;
    let heads = heads.clamp(1, 4);
    let config = ModelConfig {
        embed_dim: 16,
        hidden_dim: 16,
        num_heads: heads,
        ..ModelConfig::tiny(Architecture::DualEncoderFusionClassifier, vocab.len(), HEATMAP_SEQ_LEN)
    };
    let model = Model::<f32>::new(config, seed).map_err(|e| e.to_string())?.with_vocab(&vocab);
    let encoded = model.encode(&input, &vocab);
    let weights = model.fusion_attention(&encoded).map_err(|e| e.to_string())?;
    let (text, code) = match &encoded {
        vpsn_core::nn::EncodedInput::Dual { text, code } => (text, code),
        _ => return Err("expected separate text and code sequences".into()),
    };
    let text_tokens: Vec<String> = text.ids[..text.real_len()].iter().map(|&id| label(&vocab, id)).collect();
    let code_tokens: Vec<String> = code.ids[..code.real_len()].iter().map(|&id| label(&vocab, id)).collect();
    let mean = weights.averaged();
    let rows: Vec<Vec<f32>> = (0..mean.rows()).map(|r| mean.row(r).to_vec()).collect();
    Ok(json!({
        "text_tokens": text_tokens,
        "code_tokens": code_tokens,
        "weights": rows,
        "heads": heads,
        "max_row_sum_error": weights.max_row_sum_error(),
    }))
}

fn rouge_json(s: RougeScore) -> Value {
    json!({"precision": s.precision, "recall": s.recall, "f1": s.f1})
}

fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<T>, String> {
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| format!("bad {what} {s:?}")))
        .collect()
}

/// Rouge-1/2/L of a generated aspect against a reference, AUC of a score
/// list, and the explanation sentence for four aspect phrases. Empty
/// inputs skip their part.
#[wasm_bindgen]
pub fn evaluate(candidate: &str, reference: &str, scores: &str, labels: &str, aspects: &str) -> Result<String, JsError> {
    to_js(evaluate_value(candidate, reference, scores, labels, aspects))
}

/// `aspects` is a JSON object with any of `vulnerability_type`,
/// `root_cause`, `attack_vector`, `impact`.
pub fn evaluate_value(candidate: &str, reference: &str, scores: &str, labels: &str, aspects: &str) -> Result<Value, String> {
    let mut out = json!({});
    if !reference.trim().is_empty() {
        out["rouge"] = json!({
            "rouge_1": rouge_json(rouge_n(candidate, reference, 1)),
            "rouge_2": rouge_json(rouge_n(candidate, reference, 2)),
            "rouge_l": rouge_json(rouge_l(candidate, reference)),
        });
    }
    if !scores.trim().is_empty() || !labels.trim().is_empty() {
        let s: Vec<f64> = parse_list(scores, "score")?;
        let l: Vec<u8> = parse_list(labels, "label")?;
        if let Some(bad) = l.iter().find(|&&y| y > 1) {
            return Err(format!("labels must be 0 or 1, got {bad}"));
        }
        let flags: Vec<bool> = l.iter().map(|&y| y == 1).collect();
        out["auc"] = json!(auc(&s, &flags).map_err(|e| e.to_string())?);
    }
    if !aspects.trim().is_empty() {
        let set: AspectSet = serde_json::from_str(aspects).map_err(|e| format!("aspects: {e}"))?;
        out["explanation"] = json!(render_explanation(&set).rendered);
    }
    Ok(out)
}
