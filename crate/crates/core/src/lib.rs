pub mod data;
pub mod error;
pub mod experiment;
pub mod icing;
pub mod network;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{GradTape, Gradients, Scalar, Tensor, Var};
