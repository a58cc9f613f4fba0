//! Adam optimizer and the cosine-annealing learning-rate schedule with
//! restarts at phase boundaries.

use super::tensor::Tensor;
use super::DiffError;

/// Cosine annealing from `initial_lr` down to `floor_fraction * initial_lr`
/// within each segment; the rate resets to `initial_lr` at every restart step.
#[derive(Clone, Debug, PartialEq)]
pub struct LrSchedule {
    initial_lr: f64,
    total_steps: usize,
    restart_steps: Vec<usize>,
    floor_fraction: f64,
}

impl LrSchedule {
    pub fn new(initial_lr: f64, total_steps: usize, restart_steps: &[usize]) -> Self {
        assert!(initial_lr > 0.0, "initial_lr must be positive");
        let mut restarts: Vec<usize> =
            restart_steps.iter().copied().filter(|&s| s > 0 && s < total_steps).collect();
        restarts.sort_unstable();
        restarts.dedup();
        LrSchedule { initial_lr, total_steps, restart_steps: restarts, floor_fraction: 0.1 }
    }

    pub fn initial_lr(&self) -> f64 {
        self.initial_lr
    }

    pub fn restart_steps(&self) -> &[usize] {
        &self.restart_steps
    }

    /// Learning rate at a step. Deterministic in (step, config).
    pub fn lr(&self, step: usize) -> f64 {
        let step = step.min(self.total_steps.saturating_sub(1));
        let mut seg_start = 0usize;
        let mut seg_end = self.total_steps;
        for &r in &self.restart_steps {
            if step >= r {
                seg_start = r;
            } else {
                seg_end = r;
                break;
            }
        }
        if seg_end <= seg_start + 1 {
            return self.initial_lr;
        }
        let progress = (step - seg_start) as f64 / (seg_end - seg_start) as f64;
        let floor = self.floor_fraction * self.initial_lr;
        floor + (self.initial_lr - floor) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

/// Adam moment accumulators; lazily shaped on the first step.
#[derive(Clone, Debug)]
pub struct AdamState {
    step_count: u64,
    first_moment: Vec<Tensor>,
    second_moment: Vec<Tensor>,
    betas: (f64, f64),
    epsilon: f64,
}

impl AdamState {
    pub fn new() -> Self {
        Self::with_hyperparams((0.9, 0.999), 1e-8)
    }

    pub fn with_hyperparams(betas: (f64, f64), epsilon: f64) -> Self {
        AdamState {
            step_count: 0,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
            betas,
            epsilon,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn moments(&self, idx: usize) -> (&Tensor, &Tensor) {
        (&self.first_moment[idx], &self.second_moment[idx])
    }

    /// One Adam update over an aligned parameter/gradient list.
    ///
    /// `names` is used for diagnostics only; a NaN gradient aborts with the
    /// offending parameter named.
    pub fn step(
        &mut self,
        lr: f64,
        params: &mut [&mut Tensor],
        grads: &[Tensor],
        names: &[String],
    ) -> Result<(), DiffError> {
        assert_eq!(params.len(), grads.len(), "params/grads length mismatch");
        if self.first_moment.is_empty() {
            self.first_moment = grads.iter().map(|g| Tensor::zeros(g.shape())).collect();
            self.second_moment = grads.iter().map(|g| Tensor::zeros(g.shape())).collect();
        }
        for (idx, g) in grads.iter().enumerate() {
            if !g.all_finite() {
                let name = names.get(idx).cloned().unwrap_or_else(|| format!("param{idx}"));
                return Err(DiffError::NonFinite(format!(
                    "non-finite gradient for parameter '{name}'"
                )));
            }
        }
        self.step_count += 1;
        let (b1, b2) = self.betas;
        let t = self.step_count as i32;
        let bias1 = 1.0 - b1.powi(t);
        let bias2 = 1.0 - b2.powi(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first_moment.iter_mut().zip(self.second_moment.iter_mut()))
        {
            debug_assert_eq!(p.shape(), g.shape(), "param/grad shape mismatch");
            for ((pv, &gv), (mv, vv)) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()))
            {
                *mv = b1 * *mv + (1.0 - b1) * gv;
                *vv = b2 * *vv + (1.0 - b2) * gv * gv;
                let m_hat = *mv / bias1;
                let v_hat = *vv / bias2;
                *pv -= lr * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}

impl Default for AdamState {
    fn default() -> Self {
        Self::new()
    }
}

/// One optimizer step with the learning rate taken from the schedule.
pub fn adam_step(
    state: &mut AdamState,
    params: &mut [&mut Tensor],
    grads: &[Tensor],
    names: &[String],
    schedule: &LrSchedule,
    step: usize,
) -> Result<(), DiffError> {
    state.step(schedule.lr(step), params, grads, names)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradients_leave_params_unchanged_and_decay_moments() {
        let mut state = AdamState::new();
        let mut p = Tensor::vector(vec![1.0, -2.0]);
        let g1 = Tensor::vector(vec![0.5, 0.5]);
        let g0 = Tensor::zeros(&[2]);
        let names = vec!["p".to_string()];
        state.step(1e-3, &mut [&mut p], std::slice::from_ref(&g1), &names).unwrap();
        let before = p.clone();
        let (m_before, _) = state.moments(0);
        let m_before = m_before.data()[0];
        state.step(1e-3, &mut [&mut p], std::slice::from_ref(&g0), &names).unwrap();
        // With g = 0 the first moment decays toward zero but v_hat keeps the
        // old mass, so the parameter still moves slightly; moments must shrink.
        let (m_after, _) = state.moments(0);
        assert!(m_after.data()[0].abs() < m_before.abs());
        assert!((p.data()[0] - before.data()[0]).abs() < 1e-3);
    }

    #[test]
    fn exactly_zero_history_is_a_fixed_point() {
        let mut state = AdamState::new();
        let mut p = Tensor::vector(vec![1.0, -2.0]);
        let g0 = Tensor::zeros(&[2]);
        let names = vec!["p".to_string()];
        state.step(1e-3, &mut [&mut p], std::slice::from_ref(&g0), &names).unwrap();
        assert_eq!(p.data(), &[1.0, -2.0]);
    }

    #[test]
    fn first_step_moves_by_about_lr() {
        // Bias correction makes the very first update lr * g / (|g| + eps).
        let mut state = AdamState::new();
        let mut p = Tensor::scalar(0.0);
        let g = Tensor::scalar(1.0);
        state.step(1e-3, &mut [&mut p], &[g], &["p".to_string()]).unwrap();
        let expected = -1e-3 / (1.0 + 1e-8);
        assert!((p.item() - expected).abs() < 1e-12, "got {}", p.item());
    }

    #[test]
    fn nan_gradient_aborts_with_parameter_name() {
        let mut state = AdamState::new();
        let mut p = Tensor::scalar(0.0);
        let g = Tensor::scalar(f64::NAN);
        let err = state
            .step(1e-3, &mut [&mut p], &[g], &["enc.w0".to_string()])
            .unwrap_err();
        assert!(err.to_string().contains("enc.w0"));
    }

    #[test]
    fn schedule_initial_and_restart_values() {
        let s = LrSchedule::new(1e-3, 100, &[40, 70]);
        assert_eq!(s.lr(0), 1e-3);
        assert_eq!(s.lr(40), 1e-3);
        assert_eq!(s.lr(70), 1e-3);
        // Just before a restart the rate is near the floor.
        assert!(s.lr(39) < 0.2 * 1e-3);
        assert!(s.lr(99) < 0.2 * 1e-3);
        // Deterministic.
        assert_eq!(s.lr(17), s.lr(17));
    }

    #[test]
    fn schedule_is_continuous_within_segments() {
        let s = LrSchedule::new(1.0, 1000, &[500]);
        for step in 1..499 {
            let a = s.lr(step);
            let b = s.lr(step + 1);
            assert!((a - b).abs() < 0.02, "jump at {step}");
            assert!(b <= a + 1e-12, "lr must not increase within a segment");
        }
    }
}
