pub mod baselines;
pub mod data;
pub mod error;
pub mod gaussian;
pub mod harness;
pub mod inference;
pub mod posterior;
pub mod rng;
pub mod simplex;
pub mod theory;

pub use error::{Error, Result};
