//! Early-exit detection of semantic content in latent diffusion trajectories.

pub mod cli;
pub mod decoder;
pub mod detector;
pub mod diffusion;
pub mod error;
pub mod freq;
pub mod guard;
pub mod linalg;
pub mod linear;
pub mod rng;
pub mod tensor;
pub mod tensorio;

pub use error::{Error, Result};
pub use tensor::Tensor;
