pub mod cli;
pub mod ct_sim;
pub mod error;
pub mod freq;
pub mod kv;
pub mod metrics;
pub mod model;
pub mod training;
pub mod seed;
pub mod tensor;

pub use error::{Error, Result};
