//! Masked discrete diffusion over latent symbolic concept sequences.
//!
//! A neural unmasking model proposes concept values for masked positions; a
//! symbolic program maps complete concept sequences to output sequences.
//! Training minimizes a continuous-time evidence bound on the output
//! likelihood using leave-one-out score gradients and a self-normalized
//! importance-sampled variational posterior, so no concept supervision is
//! required. Brute-force oracles back every estimator at desk scale.

pub mod config;
pub mod diffusion;
pub mod error;
pub mod infer;
pub mod metrics;
pub mod model;
pub mod oracle;
pub mod program;
pub mod rng;
pub mod task;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
