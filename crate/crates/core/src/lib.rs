//! Masked-autoencoder representation learning for distributed acoustic
//! sensing (DAS) waterfall plots.
//!
//! The crate covers the whole pipeline: synthetic waterfall generation
//! ([`dasgen`]), the STFT front-end ([`stft`]), tube partitioning and masking
//! ([`tubes`]), the asymmetric transformer autoencoder ([`model`]), masked
//! reconstruction pre-training with checkpoint transfer ([`pipeline`]) and the
//! evaluation harness ([`eval`]). Everything trains on the small reverse-mode
//! engine in [`numerics`].

pub mod dasgen;
pub mod error;
pub mod eval;
pub mod model;
pub mod numerics;
pub mod pipeline;
mod seed;
pub mod stft;
pub mod tubes;

pub use error::{Error, Result};
pub use numerics::{NdArray, Scalar};
