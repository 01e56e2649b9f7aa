//! Aspect generation: greedy and beam decoding, running the four per-aspect
//! generators, and rendering the explanation sentence.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{Aspect, AspectSet, ModelInput};
use crate::error::{Error, Result};
use crate::nn::{EncodedInput, Matrix, Model, Scalar};
use crate::text::{decode_ids, Vocabulary, BOS, CLS, EOS, PAD, SEP};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationConfig {
    pub max_new_tokens: usize,
    pub beam_width: usize,
    /// Exponent α in `score / len^α` when ranking finished hypotheses.
    pub length_penalty: f64,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            max_new_tokens: 32,
            beam_width: 1,
            length_penalty: 0.0,
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_new_tokens == 0 || self.beam_width == 0 {
            return Err(Error::InvalidArgument(
                "max_new_tokens and beam_width must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Tokens the decoder may never emit.
fn is_banned(id: usize) -> bool {
    matches!(id, PAD | CLS | SEP | BOS)
}

struct Decoding<'m, T> {
    model: &'m Model<T>,
    memory: Matrix<T>,
    mask: Vec<bool>,
}

impl<'m, T: Scalar> Decoding<'m, T> {
    fn new(model: &'m Model<T>, input: &EncodedInput) -> Result<Self> {
        let (memory, mask) = model.memory(input)?;
        Ok(Decoding { model, memory, mask })
    }

    /// Logits of the token following `generated` (BOS is prepended).
    fn next_logits(&self, generated: &[usize]) -> Result<Vec<f64>> {
        let mut prefix = Vec::with_capacity(generated.len() + 1);
        prefix.push(BOS);
        prefix.extend_from_slice(generated);
        let logits = self.model.decoder_forward(&prefix, &self.memory, &self.mask)?;
        Ok(logits.row(logits.rows() - 1).iter().map(|v| v.as_f64()).collect())
    }
}

/// Log-softmax over the tokens the decoder is allowed to emit.
fn log_probs(logits: &[f64]) -> Vec<f64> {
    let max = logits
        .iter()
        .enumerate()
        .filter(|(i, _)| !is_banned(*i))
        .map(|(_, v)| *v)
        .fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits
        .iter()
        .enumerate()
        .filter(|(i, _)| !is_banned(*i))
        .map(|(_, v)| (v - max).exp())
        .sum();
    let log_z = max + z.ln();
    logits
        .iter()
        .enumerate()
        .map(|(i, v)| if is_banned(i) { f64::NEG_INFINITY } else { v - log_z })
        .collect()
}

/// Highest allowed logit; ties go to the lowest id.
fn argmax_allowed(logits: &[f64]) -> usize {
    let mut best = None;
    for (i, &v) in logits.iter().enumerate() {
        if is_banned(i) {
            continue;
        }
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i).expect("vocabulary has non-special tokens")
}

/// Greedy decoding on pre-encoded input. The returned ids exclude BOS and EOS.
pub fn greedy_decode_encoded<T: Scalar>(model: &Model<T>, input: &EncodedInput, config: &GenerationConfig) -> Result<Vec<usize>> {
    config.validate()?;
    let dec = Decoding::new(model, input)?;
    let mut out = Vec::new();
    while out.len() < config.max_new_tokens {
        let next = argmax_allowed(&dec.next_logits(&out)?);
        if next == EOS {
            break;
        }
        out.push(next);
    }
    Ok(out)
}

pub fn greedy_decode<T: Scalar>(model: &Model<T>, vocab: &Vocabulary, input: &ModelInput, config: &GenerationConfig) -> Result<Vec<usize>> {
    greedy_decode_encoded(model, &model.encode(input, vocab), config)
}

/// A finished or truncated hypothesis with its summed log-probability
/// (including the EOS step when it ended on EOS).
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    pub ended: bool,
}

impl Hypothesis {
    pub fn normalized(&self, length_penalty: f64) -> f64 {
        if length_penalty == 0.0 {
            return self.log_prob;
        }
        let len = (self.tokens.len() + usize::from(self.ended)).max(1) as f64;
        self.log_prob / len.powf(length_penalty)
    }
}

fn best_of(hyps: Vec<Hypothesis>, length_penalty: f64) -> Hypothesis {
    let mut best: Option<Hypothesis> = None;
    for h in hyps {
        match &best {
            Some(b) if h.normalized(length_penalty) <= b.normalized(length_penalty) => {}
            _ => best = Some(h),
        }
    }
    best.expect("at least one hypothesis")
}

/// Plain beam search: keeps `width` live hypotheses, moves EOS
/// continuations ranked within the top `width` to the finished pool, and
/// stops once `width` hypotheses have finished or the token cap is hit.
pub fn beam_search<T: Scalar>(model: &Model<T>, input: &EncodedInput, config: &GenerationConfig) -> Result<Hypothesis> {
    config.validate()?;
    let dec = Decoding::new(model, input)?;
    let width = config.beam_width;
    let mut live = vec![Hypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
        ended: false,
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();
    for _ in 0..config.max_new_tokens {
        // (score, logit, beam index, token)
        let mut candidates: Vec<(f64, f64, usize, usize)> = Vec::new();
        for (bi, h) in live.iter().enumerate() {
            let logits = dec.next_logits(&h.tokens)?;
            let lp = log_probs(&logits);
            for (tok, (&l, &raw)) in lp.iter().zip(&logits).enumerate() {
                if !is_banned(tok) {
                    candidates.push((h.log_prob + l, raw, bi, tok));
                }
            }
        }
        candidates.sort_by(|a, b| {
            b.0.total_cmp(&a.0)
                .then(b.1.total_cmp(&a.1))
                .then(a.2.cmp(&b.2))
                .then(a.3.cmp(&b.3))
        });
        let mut next_live = Vec::with_capacity(width);
        for (rank, (score, _, bi, tok)) in candidates.into_iter().enumerate() {
            if tok == EOS {
                if rank < width {
                    finished.push(Hypothesis {
                        tokens: live[bi].tokens.clone(),
                        log_prob: score,
                        ended: true,
                    });
                }
            } else if next_live.len() < width {
                let mut tokens = live[bi].tokens.clone();
                tokens.push(tok);
                next_live.push(Hypothesis {
                    tokens,
                    log_prob: score,
                    ended: false,
                });
            }
            if next_live.len() == width && rank + 1 >= width {
                break;
            }
        }
        live = next_live;
        if finished.len() >= width || live.is_empty() {
            break;
        }
    }
    if finished.len() < width {
        finished.extend(live);
    }
    Ok(best_of(finished, config.length_penalty))
}

/// Scores the greedy path the same way beam search scores hypotheses.
pub fn greedy_hypothesis<T: Scalar>(model: &Model<T>, input: &EncodedInput, config: &GenerationConfig) -> Result<Hypothesis> {
    config.validate()?;
    let dec = Decoding::new(model, input)?;
    let mut h = Hypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
        ended: false,
    };
    while h.tokens.len() < config.max_new_tokens {
        let logits = dec.next_logits(&h.tokens)?;
        let next = argmax_allowed(&logits);
        h.log_prob += log_probs(&logits)[next];
        if next == EOS {
            h.ended = true;
            break;
        }
        h.tokens.push(next);
    }
    Ok(h)
}

/// Beam decoding. For widths above one the greedy path also competes, so
/// the result never scores below greedy.
pub fn beam_decode_encoded<T: Scalar>(model: &Model<T>, input: &EncodedInput, config: &GenerationConfig) -> Result<Vec<usize>> {
    let beam = beam_search(model, input, config)?;
    if config.beam_width == 1 {
        return Ok(beam.tokens);
    }
    let greedy = greedy_hypothesis(model, input, config)?;
    Ok(best_of(vec![beam, greedy], config.length_penalty).tokens)
}

pub fn beam_decode<T: Scalar>(model: &Model<T>, vocab: &Vocabulary, input: &ModelInput, config: &GenerationConfig) -> Result<Vec<usize>> {
    beam_decode_encoded(model, &model.encode(input, vocab), config)
}

/// Greedy when `beam_width == 1`, beam search otherwise.
pub fn decode_encoded<T: Scalar>(model: &Model<T>, input: &EncodedInput, config: &GenerationConfig) -> Result<Vec<usize>> {
    if config.beam_width <= 1 {
        greedy_decode_encoded(model, input, config)
    } else {
        beam_decode_encoded(model, input, config)
    }
}

/// One trained generator per aspect, all sharing one vocabulary.
#[derive(Debug, Clone, Default)]
pub struct AspectGenerators {
    pub models: BTreeMap<Aspect, Model<f32>>,
}

impl AspectGenerators {
    pub fn insert(&mut self, aspect: Aspect, model: Model<f32>) {
        self.models.insert(aspect, model);
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    /// Errors unless every generator was trained with `vocab`.
    pub fn check_vocabulary(&self, vocab: &Vocabulary) -> Result<()> {
        let digest = vocab.digest();
        for (aspect, model) in &self.models {
            if model.vocab_digest != digest {
                return Err(Error::Checkpoint(format!(
                    "generator for {aspect} was trained with a different vocabulary"
                )));
            }
        }
        Ok(())
    }
}

/// Runs each available generator independently; empty decodes leave the
/// aspect absent.
pub fn generate_aspects(generators: &AspectGenerators, vocab: &Vocabulary, input: &ModelInput, config: &GenerationConfig) -> Result<AspectSet> {
    generators.check_vocabulary(vocab)?;
    let jobs: Vec<(&Aspect, &Model<f32>)> = generators.models.iter().collect();
    let decoded = crate::parallel::map_ordered(&jobs, |_, (aspect, model)| {
        let ids = decode_encoded(*model, &model.encode(input, vocab), config)?;
        Ok::<_, Error>((**aspect, decode_ids(&ids, vocab)?))
    });
    let mut set = AspectSet::default();
    for item in decoded {
        let (aspect, text) = item?;
        if !text.trim().is_empty() {
            set.set(aspect, Some(text));
        }
    }
    Ok(set)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Explanation {
    pub aspects: AspectSet,
    pub rendered: String,
}

pub const NO_ASPECTS_SENTENCE: &str = "Predicted vulnerability patch (no aspect details generated).";

/// Renders the analyst-facing sentence. Absent aspects drop their clause.
pub fn render_explanation(aspects: &AspectSet) -> Explanation {
    let clean = |a: Aspect| aspects.get(a).map(str::trim).filter(|s| !s.is_empty());
    let kind = clean(Aspect::VulnerabilityType);
    let cause = clean(Aspect::RootCause);
    let vector = clean(Aspect::AttackVector);
    let impact = clean(Aspect::Impact);

    let rendered = if kind.is_none() && cause.is_none() && vector.is_none() && impact.is_none() {
        NO_ASPECTS_SENTENCE.to_string()
    } else {
        let mut s = format!("This is patching for {}", kind.unwrap_or("a vulnerability"));
        if let Some(c) = cause {
            s.push_str(&format!(", the root cause is {c}"));
        }
        match (vector, impact) {
            (Some(v), Some(i)) => s.push_str(&format!(", attacker can exploit by {v} to {i}")),
            (Some(v), None) => s.push_str(&format!(", attacker can exploit by {v}")),
            (None, Some(i)) if cause.is_some() => s.push_str(&format!(", which can be exploited to {i}")),
            (None, Some(i)) => s.push_str(&format!(" that can be exploited to {i}")),
            (None, None) => {}
        }
        s.push('.');
        s
    };
    Explanation {
        aspects: aspects.clone(),
        rendered,
    }
}
