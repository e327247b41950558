//! Identity-preserving video diffusion by sequence concatenation, built end
//! to end on a synthetic glyph domain.

pub mod curator;
pub mod embed;
pub mod error;
pub mod eval;
pub mod latent;
pub mod model;
pub mod repro;
pub mod sampler;
pub mod seed;
pub mod synth;
pub mod tensorio;
pub mod trainer;

pub use error::{Error, Result};
