//! Dense `f64` tensors with tape-based reverse-mode differentiation.
//!
//! The crate is intentionally small: a value type ([`Tensor`]), a recording
//! tape ([`Graph`]/[`Var`]) with the operations a point-cloud sequence
//! network needs, the Adam optimizer, Xavier initialization, and a flat
//! binary checkpoint container.

mod checkpoint;
mod error;
mod graph;
mod init;
mod optim;
mod tensor;

pub use checkpoint::{Checkpoint, ParamStore};
pub use error::TensorError;
pub use graph::{Gradients, Graph, Var};
pub use init::xavier_uniform;
pub use optim::{adam_step, Adam, AdamConfig, AdamState};
pub use tensor::Tensor;

pub type Result<T, E = TensorError> = std::result::Result<T, E>;
