//! Binary checkpoint format.
//!
//! ```text
//! "VPSN" | version u32 | config_len u32 | config JSON | vocab sha256 [32]
//! then per tensor: name_len u32 | name | rank u32 | dims u32[rank] | f32[] row-major
//! ```
//! All integers and floats are little-endian.

use std::fs;
use std::path::Path;

use super::config::ModelConfig;
use super::model::Model;
use super::params::ParamStore;
use super::tensor::Matrix;
use crate::error::{Error, Result};
use crate::text::Vocabulary;

pub const MAGIC: &[u8; 4] = b"VPSN";
pub const FORMAT_VERSION: u32 = 1;

/// Decoded file contents before any validation against a vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    pub version: u32,
    pub config: ModelConfig,
    pub vocab_digest: [u8; 32],
    pub tensors: Vec<(String, Matrix<f32>)>,
}

pub fn encode_checkpoint(model: &Model<f32>) -> Result<Vec<u8>> {
    let config = serde_json::to_vec(&model.config)?;
    let mut out = Vec::with_capacity(64 + config.len() + model.params.total_elements() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(&config);
    out.extend_from_slice(&model.vocab_digest);
    for (name, m) in model.params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&2u32.to_le_bytes());
        out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
        for v in m.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Checkpoint(format!("truncated file while reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ModelCheckpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {version}, this build reads version {FORMAT_VERSION}"
        )));
    }
    let config_len = r.u32("config length")? as usize;
    let config: ModelConfig = serde_json::from_slice(r.take(config_len, "config")?)?;
    let vocab_digest: [u8; 32] = r.take(32, "vocabulary digest")?.try_into().expect("32 bytes");
    let mut tensors = Vec::new();
    while !r.done() {
        let name_len = r.u32("tensor name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "tensor name")?)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32("tensor rank")?;
        let dims: Vec<usize> = (0..rank)
            .map(|_| r.u32("tensor dims").map(|d| d as usize))
            .collect::<Result<_>>()?;
        let (rows, cols) = match dims.as_slice() {
            [n] => (1, *n),
            [a, b] => (*a, *b),
            _ => return Err(Error::Checkpoint(format!("tensor {name} has unsupported rank {rank}"))),
        };
        let raw = r.take(rows * cols * 4, "tensor data")?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        tensors.push((name, Matrix::from_vec(rows, cols, data)));
    }
    Ok(ModelCheckpoint {
        version,
        config,
        vocab_digest,
        tensors,
    })
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

impl ModelCheckpoint {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        decode_checkpoint(&bytes)
    }

    /// Rebuilds the model, checking the vocabulary digest and that every
    /// tensor matches the architecture's declared names and shapes.
    pub fn into_model(self, vocab: &Vocabulary) -> Result<Model<f32>> {
        let expected = vocab.digest();
        if self.vocab_digest != expected {
            return Err(Error::Checkpoint(format!(
                "vocabulary digest mismatch: checkpoint was trained with {} but the supplied vocabulary hashes to {}; load the vocabulary file saved alongside the checkpoint",
                hex(&self.vocab_digest),
                hex(&expected)
            )));
        }
        let mut model: Model<f32> = Model::new(self.config, 0)?;
        let store: &mut ParamStore<f32> = &mut model.params;
        if self.tensors.len() != store.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, file has {}",
                store.len(),
                self.tensors.len()
            )));
        }
        for (id, (name, value)) in self.tensors.into_iter().enumerate() {
            if store.name(id) != name {
                return Err(Error::Checkpoint(format!(
                    "tensor {id} is {name:?}, expected {:?}",
                    store.name(id)
                )));
            }
            if store.get(id).shape() != value.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {name} has shape {:?}, expected {:?}",
                    value.shape(),
                    store.get(id).shape()
                )));
            }
            *store.get_mut(id) = value;
        }
        model.vocab_digest = expected;
        Ok(model)
    }
}

pub fn save_checkpoint(model: &Model<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_checkpoint(model)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>, vocab: &Vocabulary) -> Result<Model<f32>> {
    ModelCheckpoint::read(path)?.into_model(vocab)
}

/// Like [`load_checkpoint`], additionally requiring the stored config to
/// equal `expected`.
pub fn load_checkpoint_expecting(path: impl AsRef<Path>, vocab: &Vocabulary, expected: &ModelConfig) -> Result<Model<f32>> {
    let ckpt = ModelCheckpoint::read(path)?;
    if let Some((field, found, want)) = ckpt.config.first_difference(expected) {
        return Err(Error::ConfigMismatch {
            field: field.to_string(),
            found,
            expected: want,
        });
    }
    ckpt.into_model(vocab)
}
