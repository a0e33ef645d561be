pub mod cli;
pub mod encoder;
pub mod error;
pub mod harness;
pub mod rng;
pub mod tensor;
pub mod text;
pub mod tmix;
pub mod trainer;

pub use error::{Error, Result};
