//! Four-phase ILCM training: beta-VAE pretraining, uniform-prior encoder
//! training, solution functions on, and topologically masked fine-tuning
//! with a deterministic intervention encoder. The optimizer restarts its
//! cosine schedule at the start of phases 3 and 4.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{elbo_loss, BatchDraws, LossWeights};
use super::model::IlcmModel;
use super::IlcmError;
use crate::diffnum::{AdamState, LrSchedule, Tape, Tensor};
use crate::scm::WeakPair;

/// Training configuration shared by ILCM, dVAE, and the beta-VAE baseline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Steps per training phase.
    pub steps: [usize; 4],
    pub batch_size: usize,
    pub initial_lr: f64,
    /// Final beta; ramped linearly from zero over the warmup window.
    pub beta_final: f64,
    /// Fraction of phase 2 over which beta ramps (of phase 1 when phases
    /// 2..4 are empty, as in the beta-VAE baseline).
    pub beta_warmup_frac: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub sigma_x: f64,
    /// Hidden widths of the encoder and decoder MLPs.
    pub enc_hidden: Vec<usize>,
    /// Hidden widths of the solution scale/shift MLPs.
    pub sol_hidden: Vec<usize>,
    pub seed: u64,
}

impl TrainConfig {
    /// Paper-scale 2D-toy configuration: 9e4 steps, batch 100, lr 1e-3,
    /// beta to 1, alpha 1e-2, gamma 0, two hidden layers of 100 units.
    pub fn toy2d_paper(seed: u64) -> Self {
        TrainConfig {
            steps: [9_000, 36_000, 27_000, 18_000],
            batch_size: 100,
            initial_lr: 1e-3,
            beta_final: 1.0,
            beta_warmup_frac: 0.5,
            alpha: 1e-2,
            gamma: 0.0,
            sigma_x: 0.1,
            enc_hidden: vec![100, 100],
            sol_hidden: vec![100, 100],
            seed,
        }
    }

    /// CI-scale toy configuration at roughly a third of the paper's steps.
    pub fn toy2d_ci(seed: u64) -> Self {
        let mut cfg = Self::toy2d_paper(seed);
        cfg.steps = [3_000, 12_000, 9_000, 6_000];
        cfg
    }

    /// Paper-scale linear-scaling configuration: batch 64, lr 3e-4, beta to
    /// 1, gamma 1, encoders with two hidden layers of 64 units.
    pub fn scaling_paper(seed: u64) -> Self {
        TrainConfig {
            steps: [14_000, 56_000, 42_000, 28_000],
            batch_size: 64,
            initial_lr: 3e-4,
            beta_final: 1.0,
            beta_warmup_frac: 0.5,
            alpha: 1e-2,
            gamma: 1.0,
            sigma_x: 0.1,
            enc_hidden: vec![64, 64],
            sol_hidden: vec![100, 100],
            seed,
        }
    }

    /// CI-scale linear-scaling configuration.
    pub fn scaling_ci(seed: u64) -> Self {
        let mut cfg = Self::scaling_paper(seed);
        cfg.steps = [4_600, 18_600, 14_000, 9_400];
        cfg
    }

    pub fn total_steps(&self) -> usize {
        self.steps.iter().sum()
    }

    pub fn validate(&self) -> Result<(), IlcmError> {
        if self.batch_size == 0 {
            return Err(IlcmError::Contract("batch_size must be positive".into()));
        }
        if self.initial_lr <= 0.0 || self.sigma_x <= 0.0 {
            return Err(IlcmError::Contract("initial_lr and sigma_x must be positive".into()));
        }
        if self.alpha < 0.0 || self.gamma < 0.0 || self.beta_final < 0.0 {
            return Err(IlcmError::Contract("loss weights must be nonnegative".into()));
        }
        if !(0.0..=1.0).contains(&self.beta_warmup_frac) {
            return Err(IlcmError::Contract("beta_warmup_frac must be in [0, 1]".into()));
        }
        Ok(())
    }

    /// Phase of a global step (1-based).
    pub fn phase_of(&self, step: usize) -> usize {
        let mut acc = 0;
        for (k, &s) in self.steps.iter().enumerate() {
            acc += s;
            if step < acc {
                return k + 1;
            }
        }
        4
    }

    /// Beta at a global step: zero before the warmup window, then a linear
    /// ramp to `beta_final` over `beta_warmup_frac` of phase 2.
    pub fn beta_at(&self, step: usize) -> f64 {
        let (ramp_start, ramp_phase_len) = if self.steps[1..].iter().all(|&s| s == 0) {
            (0, self.steps[0])
        } else {
            (self.steps[0], self.steps[1])
        };
        let ramp_len = (ramp_phase_len as f64 * self.beta_warmup_frac).max(1.0);
        let progress = (step as f64 - ramp_start as f64) / ramp_len;
        self.beta_final * progress.clamp(0.0, 1.0)
    }

    pub fn schedule(&self) -> LrSchedule {
        let phase3_start = self.steps[0] + self.steps[1];
        let phase4_start = phase3_start + self.steps[2];
        LrSchedule::new(self.initial_lr, self.total_steps(), &[phase3_start, phase4_start])
    }
}

/// One row of the training trace.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub phase: usize,
    pub lr: f64,
    pub beta: f64,
    pub loss: f64,
    /// The same batch scored at the final beta, comparable across the ramp.
    pub full_beta_loss: f64,
}

/// Result of a training run.
pub struct TrainOutcome {
    pub trace: Vec<TraceRow>,
    pub val_loss: f64,
    pub inferred_order: Option<Vec<usize>>,
}

fn splitmix(seed: u64, step: u64) -> u64 {
    let mut z = seed ^ step.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn batch_tensors(pairs: &[WeakPair], idx: &[usize]) -> (Tensor, Tensor) {
    let d = pairs[0].x.len();
    let mut x = Vec::with_capacity(idx.len() * d);
    let mut xp = Vec::with_capacity(idx.len() * d);
    for &i in idx {
        x.extend_from_slice(&pairs[i].x);
        xp.extend_from_slice(&pairs[i].x_post);
    }
    (
        Tensor::new(vec![idx.len(), d], x).unwrap(),
        Tensor::new(vec![idx.len(), d], xp).unwrap(),
    )
}

/// Full-beta validation loss over a pair set, deterministic in (model,
/// config, pairs).
pub fn validation_loss(
    model: &IlcmModel,
    pairs: &[WeakPair],
    config: &TrainConfig,
) -> Result<f64, IlcmError> {
    if pairs.is_empty() {
        return Err(IlcmError::Contract("validation set is empty".into()));
    }
    let phase = if config.steps[1..].iter().all(|&s| s == 0) { 1 } else { 3 };
    let weights =
        LossWeights { beta: config.beta_final, alpha: config.alpha, gamma: config.gamma };
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix(config.seed, u64::MAX - 1));
    let chunk = 1000.min(pairs.len());
    let mut total = 0.0;
    let mut count = 0usize;
    let mut start = 0;
    while start < pairs.len() {
        let end = (start + chunk).min(pairs.len());
        let idx: Vec<usize> = (start..end).collect();
        let (x, xp) = batch_tensors(pairs, &idx);
        let draws = BatchDraws::sample(idx.len(), model.n(), &mut rng);
        let mut tape = Tape::new();
        let binding = model.bind(&mut tape);
        let parts = elbo_loss(&mut tape, model, &binding, &x, &xp, &draws, phase, &weights)?;
        total += tape.value(parts.loss).item() * idx.len() as f64;
        count += idx.len();
        start = end;
    }
    Ok(total / count as f64)
}

/// Train a model in place through all four phases, starting at `start_step`
/// (nonzero when resuming from a checkpoint).
pub fn train(
    model: &mut IlcmModel,
    train_pairs: &[WeakPair],
    val_pairs: &[WeakPair],
    config: &TrainConfig,
    start_step: usize,
) -> Result<TrainOutcome, IlcmError> {
    config.validate()?;
    let total = config.total_steps();
    if total == 0 || start_step >= total {
        let val_loss =
            if val_pairs.is_empty() { f64::NAN } else { validation_loss(model, val_pairs, config)? };
        return Ok(TrainOutcome { trace: vec![], val_loss, inferred_order: None });
    }
    if train_pairs.is_empty() {
        return Err(IlcmError::Contract("training set is empty".into()));
    }
    let schedule = config.schedule();
    let mut adam = AdamState::new();
    let names = model.param_names();
    let phase4_start = config.steps[0] + config.steps[1] + config.steps[2];
    let mut trace = Vec::with_capacity(total - start_step);
    let mut inferred_order = None;

    for step in start_step..total {
        let phase = config.phase_of(step);
        if phase == 4 && step == phase4_start && config.steps[3] > 0 {
            let order = infer_order_for_masking(model, train_pairs, val_pairs)?;
            model.set_topological_masks(&order);
            inferred_order = Some(order);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix(config.seed, step as u64));
        let idx: Vec<usize> =
            (0..config.batch_size).map(|_| rng.gen_range(0..train_pairs.len())).collect();
        let (x, xp) = batch_tensors(train_pairs, &idx);
        let draws = BatchDraws::sample(config.batch_size, model.n(), &mut rng);
        let weights = LossWeights {
            beta: config.beta_at(step),
            alpha: config.alpha,
            gamma: config.gamma,
        };

        let mut tape = Tape::new();
        let binding = model.bind(&mut tape);
        let parts = elbo_loss(&mut tape, model, &binding, &x, &xp, &draws, phase, &weights)?;
        let loss_val = tape.value(parts.loss).item();
        if !loss_val.is_finite() {
            return Err(IlcmError::NanLoss { phase, step });
        }
        if loss_val > 1e6 {
            return Err(IlcmError::Diverged { step, loss: loss_val, trace: Box::new(trace) });
        }
        let vars = model.binding_vars(&binding);
        let grads = crate::diffnum::gradients(&tape, parts.loss, &vars).map_err(IlcmError::Diff)?;
        drop(tape);
        let mut params = model.params_mut_list();
        adam.step(schedule.lr(step), &mut params, &grads, &names).map_err(IlcmError::Diff)?;

        let full_beta = LossWeights {
            beta: config.beta_final,
            alpha: config.alpha,
            gamma: config.gamma,
        };
        trace.push(TraceRow {
            step,
            phase,
            lr: schedule.lr(step),
            beta: weights.beta,
            loss: loss_val,
            full_beta_loss: parts.loss_at_beta(config.beta_final, &full_beta),
        });
    }

    let val_loss =
        if val_pairs.is_empty() { f64::NAN } else { validation_loss(model, val_pairs, config)? };
    Ok(TrainOutcome { trace, val_loss, inferred_order })
}

/// Topological order for phase-4 masking, via the ancestry heuristic on the
/// validation encodings (train medians as the mask baseline).
fn infer_order_for_masking(
    model: &IlcmModel,
    train_pairs: &[WeakPair],
    val_pairs: &[WeakPair],
) -> Result<Vec<usize>, IlcmError> {
    let source = if val_pairs.is_empty() { train_pairs } else { val_pairs };
    let cap = source.len().min(2000);
    let idx: Vec<usize> = (0..cap).collect();
    let (x_val, _) = batch_tensors(source, &idx);
    let val_e = model.encode_mean(&x_val);
    let train_cap = train_pairs.len().min(2000);
    let tidx: Vec<usize> = (0..train_cap).collect();
    let (x_train, _) = batch_tensors(train_pairs, &tidx);
    let train_e = model.encode_mean(&x_train);
    let baseline = crate::graphinfer::median_baseline(&train_e);
    let scores = crate::graphinfer::ancestry_scores(model, &val_e, &baseline)
        .map_err(|e| IlcmError::Contract(e.to_string()))?;
    Ok(crate::graphinfer::topological_order(&scores))
}
