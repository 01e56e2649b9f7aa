//! Building blocks. Each layer only stores parameter ids; values live in a
//! [`ParamStore`] and are read through a [`Tape`].

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::params::{Init, ParamId, ParamStore};
use super::tape::{Tape, Var};
use super::tensor::{Matrix, Scalar};

/// Inverted dropout driven by a seeded generator.
#[derive(Debug, Clone)]
pub struct Dropout {
    rate: f64,
    rng: ChaCha8Rng,
}

impl Dropout {
    pub fn new(rate: f64, seed: u64) -> Self {
        Dropout {
            rate,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

pub fn dropout<T: Scalar>(tape: &mut Tape<T>, x: Var, drop: &mut Option<Dropout>) -> Var {
    let Some(d) = drop else { return x };
    if d.rate <= 0.0 {
        return x;
    }
    let (rows, cols) = tape.shape(x);
    let keep_scale = T::of(1.0 / (1.0 - d.rate));
    let mask = Matrix::from_fn(rows, cols, |_, _| {
        if d.rng.gen::<f64>() < d.rate {
            T::zero()
        } else {
            keep_scale
        }
    });
    let m = tape.constant(mask);
    tape.mul(x, m)
}

/// Sinusoidal position encoding for `len` positions of width `dim`.
pub fn position_encoding<T: Scalar>(len: usize, dim: usize) -> Matrix<T> {
    Matrix::from_fn(len, dim, |pos, i| {
        let pair = (i / 2) as f64;
        let angle = pos as f64 / 10000f64.powf(2.0 * pair / dim as f64);
        T::of(if i % 2 == 0 { angle.sin() } else { angle.cos() })
    })
}

/// Element mask (`true` = attend) for a `targets x sources` score matrix,
/// or `None` when nothing is masked.
pub fn attention_keep_mask(targets: usize, sources: usize, key_mask: Option<&[bool]>, causal: bool) -> Option<Arc<Vec<bool>>> {
    let any_key_masked = key_mask.is_some_and(|m| m.iter().any(|k| !k));
    if !any_key_masked && !(causal && sources > 1) {
        return None;
    }
    let mut keep = Vec::with_capacity(targets * sources);
    for t in 0..targets {
        for s in 0..sources {
            let key_ok = key_mask.is_none_or(|m| m[s]);
            keep.push(key_ok && (!causal || s <= t));
        }
    }
    Some(Arc::new(keep))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, input: usize, output: usize, bias: bool, rng: &mut ChaCha8Rng) -> Self {
        let weight = store.add(format!("{name}.weight"), input, output, Init::Xavier, rng);
        let bias = bias.then(|| store.add(format!("{name}.bias"), 1, output, Init::Zeros, rng));
        Linear { weight, bias }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, x: Var) -> Var {
        let w = tape.param(self.weight);
        let y = tape.matmul(x, w);
        match self.bias {
            Some(b) => {
                let b = tape.param(b);
                tape.add_row(y, b)
            }
            None => y,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub shift: ParamId,
}

impl LayerNorm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, dim: usize, rng: &mut ChaCha8Rng) -> Self {
        LayerNorm {
            gain: store.add(format!("{name}.gain"), 1, dim, Init::Ones, rng),
            shift: store.add(format!("{name}.shift"), 1, dim, Init::Zeros, rng),
        }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, x: Var) -> Var {
        let g = tape.param(self.gain);
        let b = tape.param(self.shift);
        tape.layer_norm(x, g, b)
    }
}

/// Scaled dot-product attention over `heads` column groups, followed by a
/// bias-free output projection.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultiHeadAttention {
    pub heads: usize,
    pub hidden: usize,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
}

impl MultiHeadAttention {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, hidden: usize, heads: usize, rng: &mut ChaCha8Rng) -> Self {
        assert!(heads > 0 && hidden.is_multiple_of(heads), "hidden must divide into heads");
        MultiHeadAttention {
            heads,
            hidden,
            query: Linear::new(store, &format!("{name}.query"), hidden, hidden, true, rng),
            key: Linear::new(store, &format!("{name}.key"), hidden, hidden, true, rng),
            value: Linear::new(store, &format!("{name}.value"), hidden, hidden, true, rng),
            output: Linear::new(store, &format!("{name}.output"), hidden, hidden, false, rng),
        }
    }

    /// Ids of the value and output projections; zeroing all of them makes the
    /// layer output exactly zero.
    pub fn value_path_params(&self) -> Vec<ParamId> {
        let mut ids = vec![self.value.weight, self.output.weight];
        ids.extend(self.value.bias);
        ids.extend(self.output.bias);
        ids
    }

    /// Returns the projected context and, per head, the attention-weight node.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, queries_from: Var, keys_values_from: Var, keep: Option<Arc<Vec<bool>>>) -> (Var, Vec<Var>) {
        let q = self.query.forward(tape, queries_from);
        let k = self.key.forward(tape, keys_values_from);
        let v = self.value.forward(tape, keys_values_from);
        let head_dim = self.hidden / self.heads;
        let scale = T::of(1.0 / (head_dim as f64).sqrt());
        let mut contexts = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (qh, kh, vh) = if self.heads == 1 {
                (q, k, v)
            } else {
                (
                    tape.slice_cols(q, h * head_dim, head_dim),
                    tape.slice_cols(k, h * head_dim, head_dim),
                    tape.slice_cols(v, h * head_dim, head_dim),
                )
            };
            let scores = tape.matmul_transb(qh, kh);
            let scores = tape.scale(scores, scale);
            let attn = tape.softmax_rows(scores, keep.clone());
            weights.push(attn);
            contexts.push(tape.matmul(attn, vh));
        }
        let ctx = if contexts.len() == 1 {
            contexts[0]
        } else {
            tape.concat_cols(&contexts)
        };
        (self.output.forward(tape, ctx), weights)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeedForward {
    pub inner: Linear,
    pub outer: Linear,
}

impl FeedForward {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        FeedForward {
            inner: Linear::new(store, &format!("{name}.inner"), hidden, 4 * hidden, true, rng),
            outer: Linear::new(store, &format!("{name}.outer"), 4 * hidden, hidden, true, rng),
        }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, x: Var) -> Var {
        let h = self.inner.forward(tape, x);
        let h = tape.relu(h);
        self.outer.forward(tape, h)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncoderLayer {
    pub attention: MultiHeadAttention,
    pub attention_norm: LayerNorm,
    pub feed_forward: FeedForward,
    pub feed_forward_norm: LayerNorm,
}

impl EncoderLayer {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, hidden: usize, heads: usize, rng: &mut ChaCha8Rng) -> Self {
        EncoderLayer {
            attention: MultiHeadAttention::new(store, &format!("{name}.attention"), hidden, heads, rng),
            attention_norm: LayerNorm::new(store, &format!("{name}.attention_norm"), hidden, rng),
            feed_forward: FeedForward::new(store, &format!("{name}.feed_forward"), hidden, rng),
            feed_forward_norm: LayerNorm::new(store, &format!("{name}.feed_forward_norm"), hidden, rng),
        }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, x: Var, keep: Option<Arc<Vec<bool>>>, drop: &mut Option<Dropout>) -> Var {
        let (a, _) = self.attention.forward(tape, x, x, keep);
        let a = dropout(tape, a, drop);
        let x = tape.add(x, a);
        let x = self.attention_norm.forward(tape, x);
        let f = self.feed_forward.forward(tape, x);
        let f = dropout(tape, f, drop);
        let x = tape.add(x, f);
        self.feed_forward_norm.forward(tape, x)
    }
}

/// Token embedding, optional width projection and sinusoidal positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Embedder {
    pub table: ParamId,
    pub projection: Option<ParamId>,
    pub hidden: usize,
}

impl Embedder {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, vocab: usize, embed: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let table = store.add(format!("{name}.table"), vocab, embed, Init::Uniform(0.05), rng);
        let projection = (embed != hidden).then(|| store.add(format!("{name}.projection"), embed, hidden, Init::Xavier, rng));
        Embedder { table, projection, hidden }
    }

    /// Embeddings without positions, width `embed`.
    pub fn lookup<T: Scalar>(&self, tape: &mut Tape<T>, ids: &[usize]) -> Var {
        let table = tape.param(self.table);
        tape.embedding(table, ids)
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, ids: &[usize]) -> Var {
        let mut x = self.lookup(tape, ids);
        if let Some(p) = self.projection {
            let p = tape.param(p);
            x = tape.matmul(x, p);
        }
        let pe = tape.constant(position_encoding(ids.len(), self.hidden));
        tape.add(x, pe)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Encoder {
    pub embedder: Embedder,
    pub layers: Vec<EncoderLayer>,
}

impl Encoder {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, vocab: usize, embed: usize, hidden: usize, heads: usize, layers: usize, rng: &mut ChaCha8Rng) -> Self {
        let embedder = Embedder::new(store, &format!("{name}.embedding"), vocab, embed, hidden, rng);
        let layers = (0..layers)
            .map(|i| EncoderLayer::new(store, &format!("{name}.layer{i}"), hidden, heads, rng))
            .collect();
        Encoder { embedder, layers }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, ids: &[usize], key_mask: &[bool], drop: &mut Option<Dropout>) -> Var {
        let x = self.embedder.forward(tape, ids);
        let mut x = dropout(tape, x, drop);
        let keep = attention_keep_mask(ids.len(), ids.len(), Some(key_mask), false);
        for layer in &self.layers {
            x = layer.forward(tape, x, keep.clone(), drop);
        }
        x
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecoderLayer {
    pub self_attention: MultiHeadAttention,
    pub self_attention_norm: LayerNorm,
    pub cross_attention: MultiHeadAttention,
    pub cross_attention_norm: LayerNorm,
    pub feed_forward: FeedForward,
    pub feed_forward_norm: LayerNorm,
}

impl DecoderLayer {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, hidden: usize, heads: usize, rng: &mut ChaCha8Rng) -> Self {
        DecoderLayer {
            self_attention: MultiHeadAttention::new(store, &format!("{name}.self_attention"), hidden, heads, rng),
            self_attention_norm: LayerNorm::new(store, &format!("{name}.self_attention_norm"), hidden, rng),
            cross_attention: MultiHeadAttention::new(store, &format!("{name}.cross_attention"), hidden, heads, rng),
            cross_attention_norm: LayerNorm::new(store, &format!("{name}.cross_attention_norm"), hidden, rng),
            feed_forward: FeedForward::new(store, &format!("{name}.feed_forward"), hidden, rng),
            feed_forward_norm: LayerNorm::new(store, &format!("{name}.feed_forward_norm"), hidden, rng),
        }
    }

    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        y: Var,
        memory: Var,
        causal_keep: Option<Arc<Vec<bool>>>,
        memory_keep: Option<Arc<Vec<bool>>>,
        drop: &mut Option<Dropout>,
    ) -> Var {
        let (s, _) = self.self_attention.forward(tape, y, y, causal_keep);
        let s = dropout(tape, s, drop);
        let y = tape.add(y, s);
        let y = self.self_attention_norm.forward(tape, y);
        let (c, _) = self.cross_attention.forward(tape, y, memory, memory_keep);
        let c = dropout(tape, c, drop);
        let y = tape.add(y, c);
        let y = self.cross_attention_norm.forward(tape, y);
        let f = self.feed_forward.forward(tape, y);
        let f = dropout(tape, f, drop);
        let y = tape.add(y, f);
        self.feed_forward_norm.forward(tape, y)
    }
}

/// Decoder stack plus vocabulary projection. Token embeddings are shared
/// with the (text) encoder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decoder {
    pub layers: Vec<DecoderLayer>,
    pub vocab_projection: Linear,
}

impl Decoder {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, vocab: usize, hidden: usize, heads: usize, layers: usize, rng: &mut ChaCha8Rng) -> Self {
        let layers = (0..layers)
            .map(|i| DecoderLayer::new(store, &format!("{name}.layer{i}"), hidden, heads, rng))
            .collect();
        let vocab_projection = Linear::new(store, &format!("{name}.vocab_projection"), hidden, vocab, true, rng);
        Decoder { layers, vocab_projection }
    }

    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        embedder: &Embedder,
        prefix: &[usize],
        memory: Var,
        memory_mask: &[bool],
        drop: &mut Option<Dropout>,
    ) -> Var {
        let y = embedder.forward(tape, prefix);
        let mut y = dropout(tape, y, drop);
        let causal = attention_keep_mask(prefix.len(), prefix.len(), None, true);
        let memory_keep = attention_keep_mask(prefix.len(), memory_mask.len(), Some(memory_mask), false);
        for layer in &self.layers {
            y = layer.forward(tape, y, memory, causal.clone(), memory_keep.clone(), drop);
        }
        self.vocab_projection.forward(tape, y)
    }
}

/// Single-direction LSTM with gate order input, forget, cell, output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lstm {
    pub input_weight: ParamId,
    pub hidden_weight: ParamId,
    pub bias: ParamId,
    pub hidden: usize,
}

impl Lstm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, input: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        Lstm {
            input_weight: store.add(format!("{name}.input_weight"), input, 4 * hidden, Init::Xavier, rng),
            hidden_weight: store.add(format!("{name}.hidden_weight"), hidden, 4 * hidden, Init::Xavier, rng),
            bias: store.add(format!("{name}.bias"), 1, 4 * hidden, Init::Zeros, rng),
            hidden,
        }
    }

    /// Runs the recurrence from zero state over the rows of `inputs`,
    /// returning all hidden states stacked by row.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, inputs: Var) -> Var {
        let steps = tape.shape(inputs).0;
        let h = self.hidden;
        let w = tape.param(self.input_weight);
        let u = tape.param(self.hidden_weight);
        let b = tape.param(self.bias);
        let projected = tape.matmul(inputs, w);
        let projected = tape.add_row(projected, b);
        let mut hidden = tape.constant(Matrix::zeros(1, h));
        let mut cell = tape.constant(Matrix::zeros(1, h));
        let mut states = Vec::with_capacity(steps);
        for t in 0..steps {
            let xt = tape.slice_rows(projected, t, 1);
            let rec = tape.matmul(hidden, u);
            let z = tape.add(xt, rec);
            let zi = tape.slice_cols(z, 0, h);
            let zf = tape.slice_cols(z, h, h);
            let zg = tape.slice_cols(z, 2 * h, h);
            let zo = tape.slice_cols(z, 3 * h, h);
            let i = tape.sigmoid(zi);
            let f = tape.sigmoid(zf);
            let g = tape.tanh(zg);
            let o = tape.sigmoid(zo);
            let keep = tape.mul(f, cell);
            let write = tape.mul(i, g);
            cell = tape.add(keep, write);
            let squashed = tape.tanh(cell);
            hidden = tape.mul(o, squashed);
            states.push(hidden);
        }
        if states.is_empty() {
            return tape.constant(Matrix::zeros(0, h));
        }
        tape.concat_rows(&states)
    }
}

/// One hidden ReLU layer and a two-way output over the first state row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassifierHead {
    pub hidden: Linear,
    pub output: Linear,
}

impl ClassifierHead {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        ClassifierHead {
            hidden: Linear::new(store, &format!("{name}.hidden"), hidden, hidden, true, rng),
            output: Linear::new(store, &format!("{name}.output"), hidden, 2, true, rng),
        }
    }

    /// `pooled` is a single 1 x hidden row.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, pooled: Var, drop: &mut Option<Dropout>) -> Var {
        let h = self.hidden.forward(tape, pooled);
        let h = tape.relu(h);
        let h = dropout(tape, h, drop);
        self.output.forward(tape, h)
    }
}

/// Text-side queries attend over code-side keys and values; the result is
/// added back onto the text states.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CrossModelFusion {
    pub attention: MultiHeadAttention,
    pub post_norm: Option<LayerNorm>,
}

impl CrossModelFusion {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, hidden: usize, heads: usize, post_norm: bool, rng: &mut ChaCha8Rng) -> Self {
        CrossModelFusion {
            attention: MultiHeadAttention::new(store, &format!("{name}.attention"), hidden, heads, rng),
            post_norm: post_norm.then(|| LayerNorm::new(store, &format!("{name}.norm"), hidden, rng)),
        }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, text: Var, code: Var, code_mask: &[bool], drop: &mut Option<Dropout>) -> (Var, Vec<Var>) {
        let rows = tape.shape(text).0;
        let keep = attention_keep_mask(rows, code_mask.len(), Some(code_mask), false);
        let (a, weights) = self.attention.forward(tape, text, code, keep);
        let a = dropout(tape, a, drop);
        let fused = tape.add(text, a);
        let fused = match &self.post_norm {
            Some(norm) => norm.forward(tape, fused),
            None => fused,
        };
        (fused, weights)
    }
}
