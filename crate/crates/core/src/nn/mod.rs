//! From-scratch differentiable core: tensors, reverse-mode tape, attention,
//! encoder/decoder stacks, cross-model fusion, LSTM, heads and checkpoints.

mod checkpoint;
mod config;
pub mod layers;
mod model;
mod ops;
mod params;
mod tape;
mod tensor;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, load_checkpoint_expecting, save_checkpoint,
    ModelCheckpoint, FORMAT_VERSION, MAGIC,
};
pub use config::{Architecture, ModelConfig};
pub use layers::Dropout;
pub use model::{softmax_pair, EncodedInput, Model, Network};
pub use ops::{cross_model_fuse, multi_head_attention, AttentionWeights};
pub use params::{Init, ParamId, ParamStore};
pub use tape::{Gradients, Tape, Var, LAYER_NORM_EPS};
pub use tensor::{Matrix, Scalar};
