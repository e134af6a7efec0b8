//! Minimal tensor and reverse-mode autodiff toolkit used by the learned modules.

pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod optim;
pub mod params;
pub mod tensor;

pub use graph::{Gradients, Graph, Var};
pub use layers::{Conv2d, GruCell, Linear, UpConv2d};
pub use optim::Adam;
pub use params::{NamedTensors, ParamStore};
pub use tensor::{Real, Tensor};
