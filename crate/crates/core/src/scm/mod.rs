//! Ground-truth causal world: DAGs, structural causal models with
//! pointwise-diffeomorphic mechanisms, perfect stochastic interventions, and
//! the weakly supervised pair sampler.

mod dag;
mod mechanism;
mod model;
mod pairs;

pub use dag::Dag;
pub use mechanism::Mechanism;
pub use model::Scm;
pub use pairs::{
    sample_weak_pairs, verify_noise_invariance, Decoder, IdentityDecoder, InterventionPrior,
    InterventionTarget, PairTruth, WeakPair,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScmError {
    #[error("contract error: {0}")]
    Contract(String),
    #[error("numeric error: {0}")]
    Numeric(String),
}
