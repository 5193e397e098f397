//! Diffusion over weighted user-item interaction matrices.
//!
//! A denoising diffusion model acts on dense patches of the user-item rating
//! matrix; a row-column-factorized attention denoiser conditions on user and
//! item features. Includes dataset ingestion, training, inpainting-based
//! matrix completion, tiled full-graph sampling, and top-K ranking
//! evaluation.

pub mod diffusion;
pub mod eval;
pub mod fixture;
pub mod gdit;
pub mod ingest;
pub mod numeric;
pub mod sample;
pub mod train;
pub mod xform;

mod error;

pub use error::Error;
