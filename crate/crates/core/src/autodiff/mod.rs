//! Reverse-mode differentiation for small dense networks, including gradients
//! of losses that themselves contain input-gradients, plus Adam and checkpoints.

pub mod adam;
pub mod checkpoint;
pub mod graph;
pub mod mlp;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::Checkpoint;
pub use graph::{Graph, Smoothness, Var};
pub use mlp::{grad_input, grad_params, Activation, MlpSpec, OutputActivation, ParamStore, Segment};
