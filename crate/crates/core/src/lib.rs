//! Joint intent classification and slot filling with periodic EL2N-based
//! training-set pruning.

pub mod analysis;
pub mod curriculum;
pub mod data;
pub mod error;
pub mod experiment;
pub mod model;
pub mod runtime;
pub mod scoring;
pub mod seed;

pub use error::{Error, Result};
