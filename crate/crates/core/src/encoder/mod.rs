//! Bidirectional transformer encoder with a linear classifier on the `[CLS]`
//! position.
//!
//! Layout per block is post-norm: `LN(x + Attn(x))` then `LN(h + FFN(h))`.
//! Embeddings are the sum of learned token, absolute position and segment
//! tables, followed by layer norm. All arithmetic is `f64`.

mod checkpoint;
mod forward;
pub mod math;
mod params;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta};
pub use forward::{
    forward, multi_head_attention, AttentionOutput, Batch, ForwardMode, ForwardOutput, LayerCache,
    SequenceCache,
};
pub use math::{gelu, layer_norm, softmax, Matrix};
pub use params::{init_params, EncoderConfig, LayerParams, ModelParams, INIT_STD, INIT_TRUNCATION};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid encoder config: {0}")]
    InvalidConfig(String),
    #[error("token id {id} out of range for vocabulary of {vocab_size}")]
    TokenOutOfRange { id: u32, vocab_size: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("sequence {0} has no unmasked position")]
    AllMasked(usize),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint i/o on {path}: {source}")]
    CheckpointIo {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}
