//! The implicit latent causal model: Gaussian noise encoder/decoder, the
//! heuristic intervention encoder, and conditional affine solution functions.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::IlcmError;
use crate::diffnum::{Mlp, MlpBinding, Tape, Tensor, Var};
use crate::scm::InterventionTarget;

/// Clamp range for encoder log standard deviations.
pub const LOGSTD_MIN: f64 = -7.0;
pub const LOGSTD_MAX: f64 = 7.0;
/// Clamp range for raw solution log-scales, keeping scales in [1e-3, 1e3].
pub const SCALE_RAW_MIN: f64 = -6.907_755_278_982_137;
pub const SCALE_RAW_MAX: f64 = 6.907_755_278_982_137;

/// Posterior over the `n + 1` atomic intervention targets.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InterventionPosterior {
    pub probs: Vec<f64>,
}

impl InterventionPosterior {
    /// Most likely target; exact ties resolve to the lowest index, so the
    /// empty target wins when nothing changed.
    pub fn argmax_target(&self) -> InterventionTarget {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        InterventionTarget::from_atomic_index(best)
    }
}

/// Conditional affine solution functions `s_i(e_i; e)` with per-variable
/// input masks. A mask entry of zero removes that coordinate from the
/// conditioning input; the diagonal is always masked.
#[derive(Clone, Debug)]
pub struct SolutionFns {
    pub(crate) scale_nets: Vec<Mlp>,
    pub(crate) shift_nets: Vec<Mlp>,
    pub(crate) masks: Vec<Vec<f64>>,
}

impl SolutionFns {
    fn new(n: usize, hidden: &[usize], conditioned: bool, rng: &mut impl Rng) -> Self {
        let mut widths = vec![n];
        widths.extend_from_slice(hidden);
        widths.push(1);
        let scale_nets = (0..n).map(|_| Mlp::new(&widths, rng)).collect();
        let shift_nets = (0..n).map(|_| Mlp::new(&widths, rng)).collect();
        let masks = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| if conditioned && j != i { 1.0 } else { 0.0 })
                    .collect()
            })
            .collect();
        SolutionFns { scale_nets, shift_nets, masks }
    }

    pub fn mask(&self, i: usize) -> &[f64] {
        &self.masks[i]
    }

    fn masked_input(&self, i: usize, e: &[f64]) -> Vec<f64> {
        e.iter().zip(&self.masks[i]).map(|(&v, &m)| v * m).collect()
    }
}

/// Method variant selector used by the training baselines.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelVariant {
    /// Full implicit latent causal model.
    Ilcm,
    /// Disentanglement VAE: solution functions ignore their conditioning.
    Dvae,
}

/// All learnable state of an ILCM.
#[derive(Clone, Debug)]
pub struct IlcmModel {
    n: usize,
    data_dim: usize,
    pub(crate) enc_mean: Mlp,
    pub(crate) enc_logstd: Mlp,
    pub(crate) dec_mean: Mlp,
    sigma_x: f64,
    raw_a: Tensor,
    raw_b: Tensor,
    raw_c: Tensor,
    pub(crate) solutions: SolutionFns,
    variant: ModelVariant,
}

/// Tape handles for one registration of the model parameters.
pub struct IlcmBinding {
    pub enc_mean: MlpBinding,
    pub enc_logstd: MlpBinding,
    pub dec_mean: MlpBinding,
    pub raw_a: Var,
    pub raw_b: Var,
    pub raw_c: Var,
    pub sol_scale: Vec<MlpBinding>,
    pub sol_shift: Vec<MlpBinding>,
}

impl IlcmModel {
    pub fn new(
        n: usize,
        data_dim: usize,
        enc_hidden: &[usize],
        sol_hidden: &[usize],
        sigma_x: f64,
        variant: ModelVariant,
        rng: &mut impl Rng,
    ) -> Self {
        assert!(n >= 1 && data_dim >= 1);
        assert!(sigma_x > 0.0);
        let mut enc_widths = vec![data_dim];
        enc_widths.extend_from_slice(enc_hidden);
        enc_widths.push(n);
        let mut dec_widths = vec![n];
        dec_widths.extend_from_slice(enc_hidden);
        dec_widths.push(data_dim);
        IlcmModel {
            n,
            data_dim,
            enc_mean: Mlp::new(&enc_widths, rng),
            enc_logstd: Mlp::new(&enc_widths, rng),
            dec_mean: Mlp::new(&dec_widths, rng),
            sigma_x,
            raw_a: Tensor::scalar(0.0),
            raw_b: Tensor::scalar(0.0),
            raw_c: Tensor::scalar(0.0),
            solutions: SolutionFns::new(n, sol_hidden, variant == ModelVariant::Ilcm, rng),
            variant,
        }
    }

    /// dVAE constructor: identical architecture, but the solution nets see an
    /// all-zero conditioning input regardless of `e`.
    pub fn dvae_variant(
        n: usize,
        data_dim: usize,
        enc_hidden: &[usize],
        sol_hidden: &[usize],
        sigma_x: f64,
        rng: &mut impl Rng,
    ) -> Self {
        Self::new(n, data_dim, enc_hidden, sol_hidden, sigma_x, ModelVariant::Dvae, rng)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn data_dim(&self) -> usize {
        self.data_dim
    }

    pub fn sigma_x(&self) -> f64 {
        self.sigma_x
    }

    pub fn variant(&self) -> ModelVariant {
        self.variant
    }

    /// Intervention-encoder parameters `(a, b, c)` with `a < 0`, `b, c > 0`.
    pub fn intervention_params(&self) -> (f64, f64, f64) {
        (-self.raw_a.item().exp(), self.raw_b.item().exp(), self.raw_c.item().exp())
    }

    /// Encoder mean over a batch `[m, data_dim] -> [m, n]`.
    pub fn encode_mean(&self, x: &Tensor) -> Tensor {
        self.enc_mean.forward(x).expect("encoder width")
    }

    pub fn encode_logstd(&self, x: &Tensor) -> Tensor {
        self.enc_logstd.forward(x).expect("encoder width").map(|v| v.clamp(LOGSTD_MIN, LOGSTD_MAX))
    }

    pub fn decode_mean(&self, e: &Tensor) -> Tensor {
        self.dec_mean.forward(e).expect("decoder width")
    }

    /// Heuristic intervention posterior for a batch of pairs `[m, n+1]`.
    pub fn posterior_probs(&self, x: &Tensor, x_post: &Tensor) -> Tensor {
        let mu = self.encode_mean(x);
        let mu_post = self.encode_mean(x_post);
        let (a, b, c) = self.intervention_params();
        let m = x.rows();
        let mut out = Tensor::zeros(&[m, self.n + 1]);
        for i in 0..m {
            let mut logits = Vec::with_capacity(self.n + 1);
            logits.push(a);
            for j in 0..self.n {
                let d = (mu.at2(i, j) - mu_post.at2(i, j)).abs();
                logits.push(a + b * d + c * d * d);
            }
            let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let total: f64 = logits.iter().map(|&l| (l - mx).exp()).sum();
            for (j, &l) in logits.iter().enumerate() {
                out.set2(i, j, (l - mx).exp() / total);
            }
        }
        out
    }

    /// Intervention posterior for one pair.
    pub fn encode_intervention(&self, x: &[f64], x_post: &[f64]) -> InterventionPosterior {
        let xs = Tensor::new(vec![1, x.len()], x.to_vec()).expect("x row");
        let xp = Tensor::new(vec![1, x_post.len()], x_post.to_vec()).expect("x_post row");
        InterventionPosterior { probs: self.posterior_probs(&xs, &xp).data().to_vec() }
    }

    /// Projective noise encoding of one pair: preliminary samples from
    /// `q(e|x)` and `q(e|x_post)`, lambda-averaged on the non-intervened
    /// coordinates so they agree exactly.
    pub fn encode_project(
        &self,
        x: &[f64],
        x_post: &[f64],
        target: &InterventionTarget,
        rng: &mut impl Rng,
        lambda_override: Option<&[f64]>,
    ) -> Result<(Vec<f64>, Vec<f64>), IlcmError> {
        if !target.is_atomic() {
            return Err(IlcmError::Contract("encode_project expects an atomic target".into()));
        }
        let xs = Tensor::new(vec![1, x.len()], x.to_vec()).map_err(IlcmError::Diff)?;
        let xp = Tensor::new(vec![1, x_post.len()], x_post.to_vec()).map_err(IlcmError::Diff)?;
        let (mu, ls) = (self.encode_mean(&xs), self.encode_logstd(&xs));
        let (mu_p, ls_p) = (self.encode_mean(&xp), self.encode_logstd(&xp));
        let mut e = Vec::with_capacity(self.n);
        let mut e_post = Vec::with_capacity(self.n);
        for i in 0..self.n {
            let eps: f64 = rng.sample(rand_distr::StandardNormal);
            let eps_p: f64 = rng.sample(rand_distr::StandardNormal);
            let prelim = mu.at2(0, i) + ls.at2(0, i).exp() * eps;
            let prelim_p = mu_p.at2(0, i) + ls_p.at2(0, i).exp() * eps_p;
            if target.contains(i) {
                e.push(prelim);
                e_post.push(prelim_p);
            } else {
                let lambda = match lambda_override {
                    Some(l) => l[i],
                    None => rng.gen_range(0.0..1.0),
                };
                let avg = lambda * prelim + (1.0 - lambda) * prelim_p;
                e.push(avg);
                e_post.push(avg);
            }
        }
        Ok((e, e_post))
    }

    /// Evaluate the solution function `s_i`: returns `(z_i, scale, shift)`.
    pub fn solution_value(&self, i: usize, e_i: f64, e: &[f64]) -> (f64, f64, f64) {
        let cond = self.solutions.masked_input(i, e);
        let raw = self.solutions.scale_nets[i].forward_row(&cond).expect("scale net")[0];
        let scale = raw.clamp(SCALE_RAW_MIN, SCALE_RAW_MAX).exp();
        let shift = self.solutions.shift_nets[i].forward_row(&cond).expect("shift net")[0];
        (scale * e_i + shift, scale, shift)
    }

    /// Invert `s_i(.; e)` at `z_i`.
    pub fn solution_inverse(&self, i: usize, z_i: f64, e: &[f64]) -> f64 {
        let (_, scale, shift) = self.solution_value(i, 0.0, e);
        (z_i - shift) / scale
    }

    /// Map data to causal variables through encoder means and the solution
    /// functions.
    pub fn latents_to_causal(&self, x: &[f64]) -> Vec<f64> {
        let xs = Tensor::new(vec![1, x.len()], x.to_vec()).expect("x row");
        let e = self.encode_mean(&xs);
        let e_row = e.row(0);
        (0..self.n).map(|i| self.solution_value(i, e_row[i], e_row).0).collect()
    }

    /// Batch version of [`Self::latents_to_causal`] from noise encodings.
    pub fn causal_from_noise_rows(&self, e: &Tensor) -> Tensor {
        let m = e.rows();
        let mut out = Tensor::zeros(&[m, self.n]);
        for r in 0..m {
            let row = e.row(r).to_vec();
            for i in 0..self.n {
                out.set2(r, i, self.solution_value(i, row[i], &row).0);
            }
        }
        out
    }

    /// Restrict each solution function to the ancestors implied by a
    /// topological order. No-op for the dVAE variant, whose conditioning
    /// stays fully masked.
    pub fn set_topological_masks(&mut self, order: &[usize]) {
        assert_eq!(order.len(), self.n, "order must be a permutation");
        if self.variant == ModelVariant::Dvae {
            return;
        }
        let mut position = vec![0usize; self.n];
        for (pos, &v) in order.iter().enumerate() {
            position[v] = pos;
        }
        for i in 0..self.n {
            for j in 0..self.n {
                self.solutions.masks[i][j] =
                    if j != i && position[j] < position[i] { 1.0 } else { 0.0 };
            }
        }
    }

    pub fn solution_mask(&self, i: usize) -> &[f64] {
        self.solutions.mask(i)
    }

    pub fn set_solution_masks_raw(&mut self, masks: Vec<Vec<f64>>) {
        assert_eq!(masks.len(), self.n);
        self.solutions.masks = masks;
    }

    pub fn visit_params(&self, f: &mut dyn FnMut(String, &Tensor)) {
        self.enc_mean.visit_params("enc_mean", f);
        self.enc_logstd.visit_params("enc_logstd", f);
        self.dec_mean.visit_params("dec_mean", f);
        f("int.raw_a".into(), &self.raw_a);
        f("int.raw_b".into(), &self.raw_b);
        f("int.raw_c".into(), &self.raw_c);
        for i in 0..self.n {
            self.solutions.scale_nets[i].visit_params(&format!("sol{i}.scale"), f);
            self.solutions.shift_nets[i].visit_params(&format!("sol{i}.shift"), f);
        }
    }

    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.enc_mean.visit_params_mut("enc_mean", f);
        self.enc_logstd.visit_params_mut("enc_logstd", f);
        self.dec_mean.visit_params_mut("dec_mean", f);
        f("int.raw_a".into(), &mut self.raw_a);
        f("int.raw_b".into(), &mut self.raw_b);
        f("int.raw_c".into(), &mut self.raw_c);
        for i in 0..self.n {
            self.solutions.scale_nets[i].visit_params_mut(&format!("sol{i}.scale"), f);
            self.solutions.shift_nets[i].visit_params_mut(&format!("sol{i}.shift"), f);
        }
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        self.visit_params(&mut |name, _| names.push(name));
        names
    }

    pub fn params_mut_list(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        out.extend(self.enc_mean.params_mut_list());
        out.extend(self.enc_logstd.params_mut_list());
        out.extend(self.dec_mean.params_mut_list());
        out.push(&mut self.raw_a);
        out.push(&mut self.raw_b);
        out.push(&mut self.raw_c);
        for (scale, shift) in
            self.solutions.scale_nets.iter_mut().zip(self.solutions.shift_nets.iter_mut())
        {
            out.extend(scale.params_mut_list());
            out.extend(shift.params_mut_list());
        }
        out
    }

    /// Register every parameter on a tape, in `visit_params` order.
    pub fn bind(&self, tape: &mut Tape) -> IlcmBinding {
        IlcmBinding {
            enc_mean: self.enc_mean.bind(tape),
            enc_logstd: self.enc_logstd.bind(tape),
            dec_mean: self.dec_mean.bind(tape),
            raw_a: tape.leaf(self.raw_a.clone()),
            raw_b: tape.leaf(self.raw_b.clone()),
            raw_c: tape.leaf(self.raw_c.clone()),
            sol_scale: self.solutions.scale_nets.iter().map(|m| m.bind(tape)).collect(),
            sol_shift: self.solutions.shift_nets.iter().map(|m| m.bind(tape)).collect(),
        }
    }

    /// Binding vars flattened in `visit_params` order.
    pub fn binding_vars(&self, binding: &IlcmBinding) -> Vec<Var> {
        let mut out = Vec::new();
        out.extend(Mlp::binding_vars(&binding.enc_mean));
        out.extend(Mlp::binding_vars(&binding.enc_logstd));
        out.extend(Mlp::binding_vars(&binding.dec_mean));
        out.push(binding.raw_a);
        out.push(binding.raw_b);
        out.push(binding.raw_c);
        for (scale, shift) in binding.sol_scale.iter().zip(&binding.sol_shift) {
            out.extend(Mlp::binding_vars(scale));
            out.extend(Mlp::binding_vars(shift));
        }
        out
    }
}
