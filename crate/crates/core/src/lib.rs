//! Weakly supervised causal representation learning toolkit.
//!
//! Simulates latent structural causal models, generates before/after
//! intervention data pairs, trains implicit and explicit latent causal models
//! (plus dVAE and beta-VAE baselines), extracts causal graphs from trained
//! models, and scores disentanglement, intervention inference, and graph
//! recovery against ground truth.

pub mod datasets;
pub mod diffnum;
pub mod graphinfer;
pub mod ilcm;
pub(crate) mod linalg;
pub mod scm;

pub use diffnum::Tensor;
