//! Implicit latent causal models: encoders, decoder, conditional affine
//! solution functions, the implicit prior, losses, and the four-phase
//! training loop.

mod loss;
mod model;
mod train;

pub use loss::{elbo_loss, prior_logdensity, BatchDraws, LossParts, LossWeights};
pub use model::{
    IlcmBinding, IlcmModel, InterventionPosterior, ModelVariant, SolutionFns, LOGSTD_MAX,
    LOGSTD_MIN, SCALE_RAW_MAX, SCALE_RAW_MIN,
};
pub use train::{batch_tensors, train, validation_loss, TraceRow, TrainConfig, TrainOutcome};


use thiserror::Error;

#[derive(Debug, Error)]
pub enum IlcmError {
    #[error(transparent)]
    Diff(#[from] crate::diffnum::DiffError),
    #[error("contract error: {0}")]
    Contract(String),
    #[error("loss became non-finite in phase {phase} at step {step}")]
    NanLoss { phase: usize, step: usize },
    #[error("training diverged at step {step}: loss {loss}")]
    Diverged { step: usize, loss: f64, trace: Box<Vec<TraceRow>> },
}
