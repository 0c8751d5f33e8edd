//! Text and vision encoders producing the 768-dimensional features the
//! fusion heads consume. The toy encoders are small trainable stand-ins
//! with the same output contract as the pretrained models they replace;
//! the precomputed adapter serves features exported by any external
//! pipeline.

mod precomputed;
mod text;
mod vision;

pub use precomputed::PrecomputedFeatures;
pub use text::{TextEncoder, TokenBags, MAX_TOKENS, TEXT_BUCKETS};
pub use vision::{VisionEncoder, VisionMode};

use thiserror::Error;

use crate::tensor::TensorError;

/// Shared feature width of both modalities.
pub const D_MODEL: usize = 768;

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("image must be 3×{expected}×{expected}, got {channels}×{side}×{side}")]
    WrongImageShape {
        expected: usize,
        channels: usize,
        side: usize,
    },
    #[error("user {0} absent")]
    MissingUser(String),
    #[error("feature '{name}' has dim {got}, expected {expected}")]
    DimMismatch {
        name: String,
        got: usize,
        expected: usize,
    },
    #[error("feature '{name}' has rank {rank}, expected 1 or 2")]
    BadRank { name: String, rank: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Which feature source feeds the heads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Toy,
    Precomputed,
}
