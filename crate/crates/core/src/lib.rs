//! Bridge-diffusion virtual staining at desk scale.
//!
//! Translates 16-channel polarimetric Mueller-matrix patches into stained
//! image patches with a regulated Brownian-bridge diffusion model, trained
//! and verified entirely on a self-contained differentiable tensor substrate.

pub mod bridge;
pub mod config;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Scalar, Tensor, TensorData};
