//! Minimal reverse-mode differentiation over dense tensors.

mod gradcheck;
mod graph;
mod params;
mod rng;
mod tensor;

pub use gradcheck::{grad_check, relative_error, CheckReport, GradCheck, ParamCheck, REL_ERR_FLOOR};
pub use graph::{backward, Graph, Primitive, TensorNode, Var};
pub use params::{Param, ParamStore};
pub use rng::{stable_hash, RngStream};
pub use tensor::Tensor;
