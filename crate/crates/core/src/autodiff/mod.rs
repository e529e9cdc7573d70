//! Reverse-mode differentiation over batched dense tensors, plus Adam.

mod adam;
mod graph;
mod param;
mod tensor;

pub use adam::{adam_step, cosine_decay_factor, cosine_decay_lr, AdamConfig, StepOutcome};
pub use graph::{Gradients, Graph, NodeId, COSINE_FLOOR};
pub use param::{ParamGroup, ParamId, ParamStore, Parameter};
pub use tensor::{Real, Tensor};
