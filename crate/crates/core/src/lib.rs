pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod diffcore;
pub mod disentangle;
pub mod encoders;
pub mod error;
pub mod fusion;
pub mod gradsuite;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod scalar;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Default scalar for training and inference.
pub type Real = f64;
pub type Tensor64 = diffcore::Tensor<Real>;
pub type Graph64 = diffcore::Graph<Real>;
pub type ParamStore64 = diffcore::ParamStore<Real>;
pub type Model64 = model::Model<Real>;
pub type Trainer64 = trainer::Trainer<Real>;
pub type Checkpoint64 = checkpoint::Checkpoint<Real>;
