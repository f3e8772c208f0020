//! Pluralistic image completion in two stages.
//!
//! A bidirectional transformer over a discretised low-resolution grid
//! (see [`vocab`], [`transformer`], [`sampler`]) proposes diverse appearance
//! priors; a guided-upsampling CNN ([`upsampler`]) renders each prior back to
//! full resolution using the masked input as guidance. [`pipeline`] ties the
//! stages together for the CLI and the HTTP service.

pub mod checkpoint;
pub mod data;
pub mod image;
pub mod metrics;
pub mod pipeline;
pub mod rng;
pub mod sampler;
pub mod train;
pub mod transformer;
pub mod upsampler;
pub mod vocab;

pub use ict_ndgrad as ndgrad;

use ict_ndgrad::GradError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Grad(#[from] GradError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("image codec error: {0}")]
    Codec(String),
    #[error("unsupported image format: {0}")]
    Unsupported(String),
    #[error("dimension mismatch: {0}")]
    Dimensions(String),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("too few distinct pixels: have {distinct}, need {needed}")]
    TooFewPixels { distinct: usize, needed: usize },
    #[error("mask band [{lo}, {hi}] not reached after {attempts} attempts")]
    BandInfeasible { lo: f64, hi: f64, attempts: usize },
    #[error("token grid still contains [MASK] tokens")]
    StillMasked,
    #[error("no masked positions to score")]
    NothingMasked,
    #[error("empty corpus")]
    EmptyCorpus,
}

pub type Result<T> = std::result::Result<T, Error>;
