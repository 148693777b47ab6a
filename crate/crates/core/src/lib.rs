pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod hmm;
pub mod math;
pub mod models;
pub mod nn;
pub mod pipeline;
pub mod seed;

pub use error::{Error, Result};
