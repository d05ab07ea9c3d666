//! Debiased contrastive learning laboratory.
//!
//! The crate is organised bottom-up:
//!
//! * [`geometry`] holds hypersphere embeddings, temperature-scaled similarities
//!   and the Jacobian of normalisation.
//! * [`worldmodel`] builds synthetic latent-class worlds (an exactly enumerable
//!   discrete mixture and a continuous sphere mixture) and their samplers.
//! * [`losses`] implements the biased, unbiased and debiased contrastive
//!   objectives, both per sample and as exact expectations.
//! * [`autograd`] provides closed-form gradients of the batch losses with a
//!   finite-difference harness.
//! * [`training`] and [`evaluation`] run desk-scale encoder training and
//!   linear-probe evaluation.
//! * [`verification`] turns the finite-sample error bounds into Monte Carlo
//!   certificates.

pub mod autograd;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod losses;
pub mod rng;
pub mod summation;
pub mod training;
pub mod verification;
pub mod worldmodel;

pub use error::{Error, Result};
