//! Shared vocabulary, tokenization and fixed-length encoding.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const CLS: usize = 2;
pub const SEP: usize = 3;
pub const BOS: usize = 4;
pub const EOS: usize = 5;
pub const NUM_SPECIALS: usize = 6;

pub const SPECIAL_TOKENS: [&str; NUM_SPECIALS] = ["<pad>", "<unk>", "<cls>", "<sep>", "<bos>", "<eos>"];

pub const DEFAULT_MAX_LEN: usize = 256;

/// Lowercases and splits on whitespace; every non-alphanumeric, non-underscore
/// character becomes its own token.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut word = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() || ch == '_' {
            word.extend(ch.to_lowercase());
        } else {
            if !word.is_empty() {
                tokens.push(std::mem::take(&mut word));
            }
            if !ch.is_whitespace() {
                tokens.push(ch.to_lowercase().collect());
            }
        }
    }
    if !word.is_empty() {
        tokens.push(word);
    }
    tokens
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    fn from_tokens_unchecked(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocabulary { tokens, index }
    }

    /// Builds a vocabulary from token strings that follow the six specials.
    pub fn from_words<I, S>(words: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        tokens.extend(words.into_iter().map(Into::into));
        let vocab = Self::from_tokens_unchecked(tokens);
        if vocab.index.len() != vocab.tokens.len() {
            return Err(Error::InvalidArgument("duplicate token in vocabulary".into()));
        }
        Ok(vocab)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn id_or_unk(&self, token: &str) -> usize {
        self.id(token).unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Token ids of `text`, unknown tokens mapped to UNK, no specials added.
    pub fn ids(&self, text: &str) -> Vec<usize> {
        tokenize(text).iter().map(|t| self.id_or_unk(t)).collect()
    }

    /// SHA-256 over the vocabulary file bytes.
    pub fn digest(&self) -> [u8; 32] {
        Sha256::digest(self.to_file_string().as_bytes()).into()
    }

    pub fn to_file_string(&self) -> String {
        let mut s = String::new();
        for t in &self.tokens {
            s.push_str(t);
            s.push('\n');
        }
        s
    }

    pub fn parse_file_string(text: &str) -> Result<Self> {
        let tokens: Vec<String> = text.lines().map(str::to_string).collect();
        if tokens.len() < NUM_SPECIALS || tokens[..NUM_SPECIALS] != SPECIAL_TOKENS {
            return Err(Error::InvalidArgument(
                "vocabulary file must start with <pad> <unk> <cls> <sep> <bos> <eos>".into(),
            ));
        }
        Self::from_words(tokens.into_iter().skip(NUM_SPECIALS))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_file_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_file_string(&text)
    }
}

/// Keeps tokens seen at least `min_freq` times, ordered by frequency
/// descending then token ascending, truncated to `max_size - 6`.
pub fn build_vocab<S: AsRef<str>>(texts: &[S], min_freq: usize, max_size: usize) -> Result<Vocabulary> {
    if max_size < NUM_SPECIALS {
        return Err(Error::InvalidArgument(format!(
            "max_size must be at least {NUM_SPECIALS}, got {max_size}"
        )));
    }
    let mut freq: HashMap<String, usize> = HashMap::new();
    for text in texts {
        for tok in tokenize(text.as_ref()) {
            *freq.entry(tok).or_default() += 1;
        }
    }
    let mut ranked: Vec<(String, usize)> = freq
        .into_iter()
        .filter(|(tok, n)| *n >= min_freq.max(1) && !SPECIAL_TOKENS.contains(&tok.as_str()))
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(max_size - NUM_SPECIALS);
    Vocabulary::from_words(ranked.into_iter().map(|(t, _)| t))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<usize>,
    pub attention_mask: Vec<u8>,
}

impl TokenSequence {
    fn from_unpadded(mut ids: Vec<usize>, max_len: usize) -> Self {
        ids.truncate(max_len);
        let real = ids.len();
        ids.resize(max_len, PAD);
        let mut attention_mask = vec![1u8; real];
        attention_mask.resize(max_len, 0);
        TokenSequence { ids, attention_mask }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Number of non-padding positions (padding is always a suffix).
    pub fn real_len(&self) -> usize {
        self.attention_mask.iter().take_while(|m| **m == 1).count()
    }

    pub fn key_mask(&self) -> Vec<bool> {
        self.attention_mask.iter().map(|m| *m == 1).collect()
    }
}

/// `CLS message SEP code SEP`, truncated from the right, then padded.
pub fn encode_pair(message_text: &str, code_text: &str, vocab: &Vocabulary, max_len: usize) -> TokenSequence {
    assert!(max_len >= 4, "max_len must be at least 4");
    let mut ids = vec![CLS];
    ids.extend(vocab.ids(message_text));
    ids.push(SEP);
    ids.extend(vocab.ids(code_text));
    ids.push(SEP);
    TokenSequence::from_unpadded(ids, max_len)
}

/// `CLS text SEP`, used by each encoder of the dual-encoder models.
pub fn encode_single(text: &str, vocab: &Vocabulary, max_len: usize) -> TokenSequence {
    assert!(max_len >= 2, "max_len must be at least 2");
    let mut ids = vec![CLS];
    ids.extend(vocab.ids(text));
    ids.push(SEP);
    TokenSequence::from_unpadded(ids, max_len)
}

/// Joins non-special tokens with single spaces, stopping at the first EOS.
pub fn decode_ids(ids: &[usize], vocab: &Vocabulary) -> Result<String> {
    let mut words = Vec::new();
    for &id in ids {
        if id >= vocab.len() {
            return Err(Error::TokenOutOfRange { id, size: vocab.len() });
        }
        if id == EOS {
            break;
        }
        if id >= NUM_SPECIALS {
            words.push(vocab.tokens[id].as_str());
        }
    }
    Ok(words.join(" "))
}

/// Re-spells `text` the way the tokenizer sees it (lowercase, one space between tokens).
pub fn normalize(text: &str) -> String {
    tokenize(text).join(" ")
}
