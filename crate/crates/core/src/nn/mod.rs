//! Reverse-mode differentiable numeric engine.

pub mod graph;
pub mod layers;
pub mod optim;
pub mod tensor;

pub use graph::{Graph, Var};
pub use layers::{Attended, Attention, BiEncoding, BiLstm, LstmLayer, LstmState, StateVars};
pub use optim::{Adam, Sgd};
pub use tensor::{read_checkpoint, Gradients, ParamId, ParameterSet, Tensor};

pub(crate) use graph::argmax;
