//! Small trainable models with manual backpropagation: a normalized
//! feed-forward layer (stackable into an MLP), a normalized GRU cell with
//! BPTT, and an Adam optimizer. Parameters flatten to a single vector in
//! a documented order, which is what the optimizer, the checkpoint format
//! and the finite-difference checks all operate on.
//!
//! A model instance is single-threaded during training (BPTT is
//! sequential); independent runs with different seeds may proceed
//! concurrently.

mod adam;
mod checkpoint;
mod gru;
mod init;
mod linear;
mod loss;
mod models;

pub use adam::{AdamState, OptimizerConfig};
pub use checkpoint::{read_checkpoint, write_checkpoint, NamedParam, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use gru::{GateGrads, GateParams, GruCell, GruGrads, GruNormScope, GruStepCache};
pub use init::{random_orthogonal, InitScheme};
pub use linear::{Activation, LayerCache, LayerGrads, LinearLayer};
pub use loss::{mse, softmax_cross_entropy};
pub use models::{GruModel, GruModelCache, Mlp};
