//! The five model architectures assembled from [`super::layers`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{Architecture, ModelConfig};
use super::layers::{
    ClassifierHead, CrossModelFusion, Decoder, Dropout, Embedder, Encoder, Lstm,
};
use super::ops::AttentionWeights;
use super::params::{Init, ParamId, ParamStore};
use super::tape::{Tape, Var};
use super::tensor::{Matrix, Scalar};
use crate::corpus::ModelInput;
use crate::error::{Error, Result};
use crate::text::{encode_pair, encode_single, TokenSequence, Vocabulary, BOS};

/// Parameter layout of one architecture.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Network {
    Lstm {
        embedding: ParamId,
        lstm: Lstm,
        head: ClassifierHead,
    },
    TransformerClassifier {
        encoder: Encoder,
        head: ClassifierHead,
    },
    FusionClassifier {
        text_encoder: Encoder,
        code_encoder: Encoder,
        fusion: CrossModelFusion,
        head: ClassifierHead,
    },
    Seq2Seq {
        encoder: Encoder,
        decoder: Decoder,
    },
    FusionGenerator {
        text_encoder: Encoder,
        code_encoder: Encoder,
        fusion: CrossModelFusion,
        decoder: Decoder,
    },
}

impl Network {
    /// Registers every parameter of `config`'s architecture in declaration order.
    pub fn build<T: Scalar>(config: &ModelConfig, store: &mut ParamStore<T>, rng: &mut ChaCha8Rng) -> Network {
        let c = config;
        let encoder = |store: &mut ParamStore<T>, rng: &mut ChaCha8Rng, name: &str| {
            Encoder::new(store, name, c.vocab_size, c.embed_dim, c.hidden_dim, c.num_heads, c.num_encoder_layers, rng)
        };
        match c.architecture {
            Architecture::LstmClassifier => {
                let embedding = store.add("embedding.table", c.vocab_size, c.embed_dim, Init::Uniform(0.05), rng);
                let lstm = Lstm::new(store, "lstm", c.embed_dim, c.hidden_dim, rng);
                let head = ClassifierHead::new(store, "head", c.hidden_dim, rng);
                Network::Lstm { embedding, lstm, head }
            }
            Architecture::TransformerClassifier => {
                let encoder = encoder(store, rng, "encoder");
                let head = ClassifierHead::new(store, "head", c.hidden_dim, rng);
                Network::TransformerClassifier { encoder, head }
            }
            Architecture::DualEncoderFusionClassifier => {
                let text_encoder = encoder(store, rng, "text_encoder");
                let code_encoder = encoder(store, rng, "code_encoder");
                let fusion = CrossModelFusion::new(store, "fusion", c.hidden_dim, c.num_heads, c.fusion_post_norm, rng);
                let head = ClassifierHead::new(store, "head", c.hidden_dim, rng);
                Network::FusionClassifier { text_encoder, code_encoder, fusion, head }
            }
            Architecture::Seq2SeqGenerator => {
                let encoder = encoder(store, rng, "encoder");
                let decoder = Decoder::new(store, "decoder", c.vocab_size, c.hidden_dim, c.num_heads, c.num_decoder_layers, rng);
                Network::Seq2Seq { encoder, decoder }
            }
            Architecture::DualEncoderFusionGenerator => {
                let text_encoder = encoder(store, rng, "text_encoder");
                let code_encoder = encoder(store, rng, "code_encoder");
                let fusion = CrossModelFusion::new(store, "fusion", c.hidden_dim, c.num_heads, c.fusion_post_norm, rng);
                let decoder = Decoder::new(store, "decoder", c.vocab_size, c.hidden_dim, c.num_heads, c.num_decoder_layers, rng);
                Network::FusionGenerator { text_encoder, code_encoder, fusion, decoder }
            }
        }
    }

    pub fn fusion(&self) -> Option<&CrossModelFusion> {
        match self {
            Network::FusionClassifier { fusion, .. } | Network::FusionGenerator { fusion, .. } => Some(fusion),
            _ => None,
        }
    }
}

/// Token ids a model consumes for one commit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EncodedInput {
    /// `CLS message SEP code SEP` for single-encoder models.
    Pair(TokenSequence),
    /// Separate `CLS text SEP` sequences for the text and code encoders.
    Dual { text: TokenSequence, code: TokenSequence },
}

impl EncodedInput {
    fn check_ids(&self, vocab_size: usize) -> Result<()> {
        let seqs: Vec<&TokenSequence> = match self {
            EncodedInput::Pair(s) => vec![s],
            EncodedInput::Dual { text, code } => vec![text, code],
        };
        for s in seqs {
            if let Some(&id) = s.ids.iter().find(|&&id| id >= vocab_size) {
                return Err(Error::TokenOutOfRange { id, size: vocab_size });
            }
        }
        Ok(())
    }
}

fn real_prefix(seq: &TokenSequence) -> (&[usize], Vec<bool>) {
    let n = seq.real_len();
    (&seq.ids[..n], vec![true; n])
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub network: Network,
    pub params: ParamStore<T>,
    /// SHA-256 of the vocabulary the model was trained with.
    pub vocab_digest: [u8; 32],
}

impl<T: Scalar> Model<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::default();
        let network = Network::build(&config, &mut params, &mut rng);
        Ok(Model {
            config,
            network,
            params,
            vocab_digest: [0; 32],
        })
    }

    pub fn with_vocab(mut self, vocab: &Vocabulary) -> Self {
        self.vocab_digest = vocab.digest();
        self
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            network: self.network.clone(),
            params: self.params.cast(),
            vocab_digest: self.vocab_digest,
        }
    }

    pub fn architecture(&self) -> Architecture {
        self.config.architecture
    }

    pub fn encode(&self, input: &ModelInput, vocab: &Vocabulary) -> EncodedInput {
        let n = self.config.seq_len;
        if self.config.architecture.is_dual_encoder() {
            EncodedInput::Dual {
                text: encode_single(&input.message_text, vocab, n),
                code: encode_single(&input.code_text, vocab, n),
            }
        } else {
            EncodedInput::Pair(encode_pair(&input.message_text, &input.code_text, vocab, n))
        }
    }

    fn pair<'a>(&self, input: &'a EncodedInput) -> Result<&'a TokenSequence> {
        match input {
            EncodedInput::Pair(s) => Ok(s),
            EncodedInput::Dual { .. } => Err(Error::InvalidArgument(format!(
                "{} expects a single token sequence",
                self.config.architecture
            ))),
        }
    }

    fn dual<'a>(&self, input: &'a EncodedInput) -> Result<(&'a TokenSequence, &'a TokenSequence)> {
        match input {
            EncodedInput::Dual { text, code } => Ok((text, code)),
            EncodedInput::Pair(_) => Err(Error::InvalidArgument(format!(
                "{} expects separate text and code sequences",
                self.config.architecture
            ))),
        }
    }

    /// Encoder-side states the head or decoder reads, with their key mask.
    /// Padding is dropped up front; masked attention makes the real rows
    /// identical to a padded run.
    pub fn represent(&self, tape: &mut Tape<T>, input: &EncodedInput, drop: &mut Option<Dropout>) -> Result<(Var, Vec<bool>)> {
        input.check_ids(self.config.vocab_size)?;
        match &self.network {
            Network::Lstm { embedding, lstm, .. } => {
                let (ids, mask) = real_prefix(self.pair(input)?);
                let table = tape.param(*embedding);
                let x = tape.embedding(table, ids);
                let x = super::layers::dropout(tape, x, drop);
                Ok((lstm.forward(tape, x), mask))
            }
            Network::TransformerClassifier { encoder, .. } | Network::Seq2Seq { encoder, .. } => {
                let (ids, mask) = real_prefix(self.pair(input)?);
                Ok((encoder.forward(tape, ids, &mask, drop), mask))
            }
            Network::FusionClassifier { text_encoder, code_encoder, fusion, .. }
            | Network::FusionGenerator { text_encoder, code_encoder, fusion, .. } => {
                let (text, code) = self.dual(input)?;
                let (text_ids, text_mask) = real_prefix(text);
                let (code_ids, code_mask) = real_prefix(code);
                let t = text_encoder.forward(tape, text_ids, &text_mask, drop);
                let c = code_encoder.forward(tape, code_ids, &code_mask, drop);
                let (fused, _) = fusion.forward(tape, t, c, &code_mask, drop);
                Ok((fused, text_mask))
            }
        }
    }

    /// 1 x 2 class logits (non-patch, patch).
    pub fn class_logits(&self, tape: &mut Tape<T>, input: &EncodedInput, drop: &mut Option<Dropout>) -> Result<Var> {
        let (states, _) = self.represent(tape, input, drop)?;
        let rows = tape.shape(states).0;
        let (head, pooled) = match &self.network {
            // Final hidden state of the recurrence.
            Network::Lstm { head, .. } => (head, tape.slice_rows(states, rows - 1, 1)),
            // Position 0 carries CLS.
            Network::TransformerClassifier { head, .. } | Network::FusionClassifier { head, .. } => {
                (head, tape.slice_rows(states, 0, 1))
            }
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "{} is not a classifier",
                    self.config.architecture
                )))
            }
        };
        Ok(head.forward(tape, pooled, drop))
    }

    fn decoder_parts(&self) -> Result<(&Embedder, &Decoder)> {
        match &self.network {
            Network::Seq2Seq { encoder, decoder } => Ok((&encoder.embedder, decoder)),
            Network::FusionGenerator { text_encoder, decoder, .. } => Ok((&text_encoder.embedder, decoder)),
            _ => Err(Error::InvalidArgument(format!(
                "{} is not a generator",
                self.config.architecture
            ))),
        }
    }

    /// `prefix.len() x vocab_size` next-token logits.
    pub fn decoder_logits(&self, tape: &mut Tape<T>, memory: Var, memory_mask: &[bool], prefix: &[usize], drop: &mut Option<Dropout>) -> Result<Var> {
        let (embedder, decoder) = self.decoder_parts()?;
        if prefix.first() != Some(&BOS) {
            return Err(Error::InvalidArgument("decoder prefix must start with BOS".into()));
        }
        if let Some(&id) = prefix.iter().find(|&&id| id >= self.config.vocab_size) {
            return Err(Error::TokenOutOfRange { id, size: self.config.vocab_size });
        }
        let (mem_rows, mem_cols) = tape.shape(memory);
        if mem_cols != self.config.hidden_dim || mem_rows != memory_mask.len() {
            return Err(Error::Shape {
                operand: "encoder_states",
                expected: format!("{} x {}", memory_mask.len(), self.config.hidden_dim),
                actual: format!("{mem_rows} x {mem_cols}"),
            });
        }
        Ok(decoder.forward(tape, embedder, prefix, memory, memory_mask, drop))
    }

    /// Mean cross-entropy of the label under the class logits.
    pub fn classifier_loss(&self, tape: &mut Tape<T>, input: &EncodedInput, label: usize, drop: &mut Option<Dropout>) -> Result<Var> {
        let logits = self.class_logits(tape, input, drop)?;
        tape.cross_entropy(logits, &[Some(label)])
            .ok_or_else(|| Error::Training("empty classification target".into()))
    }

    /// Teacher-forced loss: decoder reads `BOS ⊕ reference`, predicts `reference ⊕ EOS`.
    pub fn generator_loss(&self, tape: &mut Tape<T>, input: &EncodedInput, reference: &[usize], drop: &mut Option<Dropout>) -> Result<Var> {
        let (memory, mask) = self.represent(tape, input, drop)?;
        let mut prefix = Vec::with_capacity(reference.len() + 1);
        prefix.push(BOS);
        prefix.extend_from_slice(reference);
        let mut targets: Vec<Option<usize>> = reference.iter().map(|&t| Some(t)).collect();
        targets.push(Some(crate::text::EOS));
        let logits = self.decoder_logits(tape, memory, &mask, &prefix, drop)?;
        tape.cross_entropy(logits, &targets)
            .ok_or_else(|| Error::Training("empty generation target".into()))
    }

    /// Class probabilities (non-patch, patch) with dropout disabled.
    pub fn predict_proba(&self, input: &EncodedInput) -> Result<[f64; 2]> {
        let mut tape = Tape::new(self.params.values());
        let logits = self.class_logits(&mut tape, input, &mut None)?;
        let l = tape.value(logits);
        Ok(softmax_pair([l.get(0, 0).as_f64(), l.get(0, 1).as_f64()]))
    }

    /// Encoder-side states (unpadded) for decoding.
    pub fn memory(&self, input: &EncodedInput) -> Result<(Matrix<T>, Vec<bool>)> {
        let mut tape = Tape::new(self.params.values());
        let (states, mask) = self.represent(&mut tape, input, &mut None)?;
        Ok((tape.value(states).clone(), mask))
    }

    /// Per-head fusion weights over the real (unpadded) tokens: rows are
    /// text positions, columns code positions. Dual-encoder models only.
    pub fn fusion_attention(&self, input: &EncodedInput) -> Result<AttentionWeights<T>> {
        input.check_ids(self.config.vocab_size)?;
        let (text_encoder, code_encoder, fusion) = match &self.network {
            Network::FusionClassifier { text_encoder, code_encoder, fusion, .. }
            | Network::FusionGenerator { text_encoder, code_encoder, fusion, .. } => (text_encoder, code_encoder, fusion),
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "{} has no fusion layer",
                    self.config.architecture
                )))
            }
        };
        let (text, code) = self.dual(input)?;
        let (text_ids, text_mask) = real_prefix(text);
        let (code_ids, code_mask) = real_prefix(code);
        let mut tape = Tape::new(self.params.values());
        let t = text_encoder.forward(&mut tape, text_ids, &text_mask, &mut None);
        let c = code_encoder.forward(&mut tape, code_ids, &code_mask, &mut None);
        let (_, weights) = fusion.forward(&mut tape, t, c, &code_mask, &mut None);
        let heads = weights.into_iter().map(|w| tape.value(w).clone()).collect();
        Ok(AttentionWeights { heads })
    }

    /// Full-length encoder output for a padded sequence: `(seq_len, hidden_dim)`.
    /// Uses the text-side encoder of dual-encoder models.
    pub fn encoder_forward(&self, tokens: &TokenSequence) -> Result<Matrix<T>> {
        let encoder = match &self.network {
            Network::TransformerClassifier { encoder, .. } | Network::Seq2Seq { encoder, .. } => encoder,
            Network::FusionClassifier { text_encoder, .. } | Network::FusionGenerator { text_encoder, .. } => text_encoder,
            Network::Lstm { .. } => {
                return Err(Error::InvalidArgument("the LSTM classifier has no attention encoder".into()))
            }
        };
        if let Some(&id) = tokens.ids.iter().find(|&&id| id >= self.config.vocab_size) {
            return Err(Error::TokenOutOfRange { id, size: self.config.vocab_size });
        }
        let mut tape = Tape::new(self.params.values());
        let out = encoder.forward(&mut tape, &tokens.ids, &tokens.key_mask(), &mut None);
        Ok(tape.value(out).clone())
    }

    /// Logits for every prefix position given precomputed encoder states.
    pub fn decoder_forward(&self, prefix: &[usize], encoder_states: &Matrix<T>, memory_mask: &[bool]) -> Result<Matrix<T>> {
        let mut tape = Tape::new(self.params.values());
        let memory = tape.constant(encoder_states.clone());
        let logits = self.decoder_logits(&mut tape, memory, memory_mask, prefix, &mut None)?;
        Ok(tape.value(logits).clone())
    }

    /// Hidden states of the LSTM over the unpadded tokens, one row per step.
    pub fn lstm_forward(&self, tokens: &TokenSequence) -> Result<Matrix<T>> {
        if !matches!(self.network, Network::Lstm { .. }) {
            return Err(Error::InvalidArgument(format!("{} has no LSTM", self.config.architecture)));
        }
        let mut tape = Tape::new(self.params.values());
        let (states, _) = self.represent(&mut tape, &EncodedInput::Pair(tokens.clone()), &mut None)?;
        Ok(tape.value(states).clone())
    }
}

/// Numerically stable two-way softmax.
pub fn softmax_pair(logits: [f64; 2]) -> [f64; 2] {
    let m = logits[0].max(logits[1]);
    let a = (logits[0] - m).exp();
    let b = (logits[1] - m).exp();
    [a / (a + b), b / (a + b)]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::build_vocab;

    fn vocab() -> Vocabulary {
        build_vocab(&["fix overflow in parser + len ; - return x"], 1, 64).unwrap()
    }

    fn input() -> ModelInput {
        ModelInput {
            message_text: "fix overflow".into(),
            code_text: "+ len ;\n- return x".into(),
            variant: crate::corpus::InputVariant::MessageAndChangedCode,
        }
    }

    #[test]
    fn softmax_pair_values() {
        assert_eq!(softmax_pair([0.0, 0.0]), [0.5, 0.5]);
        let p = softmax_pair([1.0, 0.0]);
        assert!((p[0] - 0.7311).abs() < 1e-4 && (p[1] - 0.2689).abs() < 1e-4);
        let q = softmax_pair([1.0 + 37.0, 37.0]);
        assert!((p[0] - q[0]).abs() < 1e-12);
    }

    #[test]
    fn every_architecture_runs() {
        let v = vocab();
        for arch in Architecture::ALL {
            let mut cfg = ModelConfig::tiny(arch, v.len(), 16);
            cfg.num_heads = 2;
            let model: Model<f32> = Model::new(cfg, 1).unwrap();
            let enc = model.encode(&input(), &v);
            if arch.is_generator() {
                let (mem, mask) = model.memory(&enc).unwrap();
                let logits = model.decoder_forward(&[BOS, 7, 8], &mem, &mask).unwrap();
                assert_eq!(logits.shape(), (3, v.len()));
                assert!(logits.is_finite());
            } else {
                let p = model.predict_proba(&enc).unwrap();
                assert!((p[0] + p[1] - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let v = vocab();
        let model: Model<f32> = Model::new(ModelConfig::tiny(Architecture::DualEncoderFusionClassifier, v.len(), 16), 3).unwrap();
        let enc = model.encode(&input(), &v);
        assert_eq!(model.predict_proba(&enc).unwrap(), model.predict_proba(&enc).unwrap());
    }

    #[test]
    fn out_of_range_token_rejected() {
        let model: Model<f32> = Model::new(ModelConfig::tiny(Architecture::TransformerClassifier, 10, 8), 0).unwrap();
        let seq = TokenSequence {
            ids: vec![2, 11, 3, 0, 0, 0, 0, 0],
            attention_mask: vec![1, 1, 1, 0, 0, 0, 0, 0],
        };
        assert!(matches!(
            model.predict_proba(&EncodedInput::Pair(seq)),
            Err(Error::TokenOutOfRange { id: 11, .. })
        ));
    }

    #[test]
    fn wrong_input_kind_rejected() {
        let v = vocab();
        let fusion: Model<f32> = Model::new(ModelConfig::tiny(Architecture::DualEncoderFusionClassifier, v.len(), 8), 0).unwrap();
        let pair = EncodedInput::Pair(encode_pair("fix", "", &v, 8));
        assert!(fusion.predict_proba(&pair).is_err());
    }
}
