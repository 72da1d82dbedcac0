//! Normalization kernels and the machinery to verify them.
//!
//! `normkit` implements RMS normalization, its partial-statistic variant,
//! and the comparison normalizers (LayerNorm, L2-Norm, BatchNorm,
//! WeightNorm) in plain `f64`, together with:
//!
//! - closed-form backward passes, cross-checked against central finite
//!   differences ([`verify::finite_diff_grad`]);
//! - an invariance lab that classifies every normalizer against weight
//!   and dataset perturbations ([`verify::check_full_table`]);
//! - a gradient-scaling checker for the `1/delta` weight-gradient law
//!   ([`verify::check_grad_invariance`]);
//! - small trainable models (normalized feed-forward layers and a GRU
//!   cell with manual backpropagation) plus Adam ([`nets`]);
//! - synthetic tasks and a training harness that emits loss curves,
//!   per-position activation statistics and partial-ratio sweeps
//!   ([`harness`]);
//! - CPU microbenchmarks of forward and forward+backward kernel cost
//!   ([`bench`]).
//!
//! The `examples/` directory has one runnable program per capability;
//! the `normkit` binary exposes the same entry points as subcommands.

pub mod bench;
pub mod cli;
pub mod harness;
pub mod nets;
pub mod normalizers;
pub mod tensor;
pub mod verify;

pub(crate) mod util;

pub use tensor::{Matrix, Vector};

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        got: String,
    },
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("unsupported operation: {0}")]
    Unsupported(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("checkpoint format error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(context: &'static str, expected: impl ToString, got: impl ToString) -> Self {
        Error::ShapeMismatch {
            context,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }
}
