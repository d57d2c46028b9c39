pub mod error;
pub mod model;
pub mod reward;
pub mod grpo;
pub mod sampler;
pub mod engine;
pub mod harness;

pub use error::{Error, Result};
