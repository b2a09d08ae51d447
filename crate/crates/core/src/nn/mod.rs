//! Per-variable networks and their optimizer.

mod mlp;
mod optim;

pub use mlp::{Activation, BoundMlp, Layer, Mlp, DEFAULT_HIDDEN};
pub use optim::{AdamW, CosineWarmRestarts, OptimConfig};

use crate::autodiff::AutodiffError;

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}
