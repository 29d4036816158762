pub mod data;
pub mod decode;
pub mod encoding;
pub mod error;
pub mod eval;
pub mod foveation;
pub mod gradcheck;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod rng;
pub mod run;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{DType, Graph, Tensor, Var};
