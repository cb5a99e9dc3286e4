//! Wavelet/Fourier dark-image enhancement network with self-mined priors.

pub mod checkpoint;
pub mod conv;
pub mod data;
pub mod dfgf_high;
pub mod dfgf_low;
pub mod error;
pub mod graph;
pub mod metrics;
pub mod network;
pub mod params;
pub mod smgm;
pub mod tensor;
pub mod training;
pub mod transforms;
pub mod verify;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
pub use tensor::{Image, Tensor};
