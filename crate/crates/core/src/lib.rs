//! Privacy auditing for small denoising diffusion models.
//!
//! Trains an MLP-based DDPM on a procedural face corpus and runs three
//! white-box attacks against it: membership inference from masked
//! reconstruction-loss statistics, identity inference over query sets, and
//! training-data extraction by multi-seed generation and k-means.

pub mod attacks;
pub mod diffusion;
pub mod error;
pub mod evaluation;
pub mod faces;
pub mod image;
pub mod occlusion;
pub mod seed;

pub use error::{Error, ErrorClass, Result};
pub use image::{Image, Shape};
