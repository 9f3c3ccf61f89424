//! Minimal CPU neural-network engine: tensors, reverse-mode graph, layers,
//! Adam and a checkpoint container. Single-threaded and deterministic.

pub mod checkpoint;
pub mod graph;
pub mod layers;
pub mod optim;
pub mod params;
pub mod tensor;

pub use checkpoint::{Checkpoint, CheckpointError, NetworkRecord};
pub use graph::{conv_out, Graph, Var};
pub use layers::{Conv2d, Linear, Norm, NormKind};
pub use optim::Adam;
pub use params::{Gradients, Init, ParamId, ParamKind, ParamStore};
pub use tensor::{Real, Tensor};

pub(crate) use graph::softmax_rows;
