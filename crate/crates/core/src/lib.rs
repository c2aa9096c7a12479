pub mod checkpoint;
pub mod classifier;
pub mod cli;
pub mod config;
pub mod error;
pub mod evaluation;
pub mod numerics;
pub mod prednet;
pub mod rankpool;
pub mod seed;
pub mod video;

pub use error::{Error, Result};
pub use numerics::{Scalar, Tensor};
