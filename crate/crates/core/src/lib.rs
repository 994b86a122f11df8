//! Residual-only deterministic diffusion for ×4 image super-resolution.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod denoiser;
pub mod diffusion;
pub mod error;
pub mod imaging;
pub mod metrics;
pub mod schedule;
pub mod trainer;

pub use error::{Error, Result};
