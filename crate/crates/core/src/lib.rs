//! HDR deghosting from three bracketed exposures with alternating spatial
//! window attention and cross-frame channel attention, plus the data,
//! training and evaluation tooling around it.

pub mod cli;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod hdrmath;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
