//! Self-contained differentiable numeric core: dense `f64` tensors,
//! reverse-mode autodiff on a flat tape, fully connected networks, Gaussian
//! log-densities, and Adam with a cosine-annealing schedule with restarts.

pub mod gradcheck;
mod nn;
mod optim;
mod tape;
mod tensor;

pub use nn::{forward_mlp, Activation, Mlp, MlpBinding};
pub use optim::{adam_step, AdamState, LrSchedule};
pub use tape::{gradients, Gradients, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

pub const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Error)]
pub enum DiffError {
    #[error("dimension error: {0}")]
    Shape(String),
    #[error("contract error: {0}")]
    Contract(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("numeric error: {0}")]
    NonFinite(String),
}

/// Elementwise `log N(x; mean, std^2)`.
pub fn gaussian_logpdf(x: &Tensor, mean: &Tensor, std: &Tensor) -> Result<Tensor, DiffError> {
    if x.shape() != mean.shape() || x.shape() != std.shape() {
        return Err(DiffError::Shape(format!(
            "gaussian_logpdf shapes {:?}/{:?}/{:?}",
            x.shape(),
            mean.shape(),
            std.shape()
        )));
    }
    if std.iter().any(|&s| s <= 0.0) {
        return Err(DiffError::Domain("gaussian_logpdf requires std > 0".into()));
    }
    let mut out = Tensor::zeros(x.shape());
    for (((o, &xv), &mv), &sv) in
        out.data_mut().iter_mut().zip(x.iter()).zip(mean.iter()).zip(std.iter())
    {
        o.clone_from(&gaussian_logpdf_scalar(xv, mv, sv));
    }
    Ok(out)
}

/// `log N(x; mean, std^2)` for scalars; the caller guarantees `std > 0`.
pub fn gaussian_logpdf_scalar(x: f64, mean: f64, std: f64) -> f64 {
    let z = (x - mean) / std;
    -HALF_LN_2PI - std.ln() - 0.5 * z * z
}

/// `log N(x; 0, 1)`.
pub fn standard_normal_logpdf(x: f64) -> f64 {
    -HALF_LN_2PI - 0.5 * x * x
}

#[cfg(test)]
mod tests {
    use super::gradcheck::{finite_difference_grads, max_relative_error, DEFAULT_STEP};
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn standard_normal_at_mode() {
        let x = Tensor::scalar(0.0);
        let m = Tensor::scalar(0.0);
        let s = Tensor::scalar(1.0);
        let lp = gaussian_logpdf(&x, &m, &s).unwrap().item();
        assert!((lp - (-0.9189385)).abs() < 1e-6, "{lp}");
    }

    #[test]
    fn at_mean_value_is_neg_half_log2pi_minus_log_std() {
        for s in [0.1, 0.5, 2.0, 13.0] {
            let lp = gaussian_logpdf_scalar(3.0, 3.0, s);
            assert!((lp - (-HALF_LN_2PI - s.ln())).abs() < 1e-12);
        }
    }

    #[test]
    fn nonpositive_std_is_domain_error() {
        let x = Tensor::scalar(0.0);
        let err = gaussian_logpdf(&x, &x, &Tensor::scalar(0.0)).unwrap_err();
        assert!(matches!(err, DiffError::Domain(_)));
    }

    #[test]
    fn density_integrates_to_one_by_quadrature() {
        // Simpson quadrature over [-8, 8] for a batch of (mean, std) pairs.
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..10 {
            let mean = rng.gen_range(-1.0..1.0);
            let std = rng.gen_range(0.3..1.2);
            let n = 4001;
            let (lo, hi) = (-8.0, 8.0);
            let h = (hi - lo) / (n - 1) as f64;
            let mut integral = 0.0;
            for i in 0..n {
                let x = lo + i as f64 * h;
                let w = if i == 0 || i == n - 1 {
                    1.0
                } else if i % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                integral += w * gaussian_logpdf_scalar(x, mean, std).exp();
            }
            integral *= h / 3.0;
            assert!((integral - 1.0).abs() < 1e-6, "integral {integral}");
        }
    }

    // Gradient checks: every differentiable tape op composed into a small
    // network loss, compared against central finite differences at 100
    // random parameter points.
    #[test]
    fn tape_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        for trial in 0..100 {
            let params: Vec<Tensor> = vec![
                Tensor::new(vec![3, 4], (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect())
                    .unwrap(),
                Tensor::new(vec![4], (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap(),
                Tensor::new(vec![4, 2], (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect())
                    .unwrap(),
                Tensor::scalar(rng.gen_range(0.2..1.5)),
            ];
            let input =
                Tensor::new(vec![5, 3], (0..15).map(|_| rng.gen_range(-2.0..2.0)).collect())
                    .unwrap();

            let eval = |ps: &[Tensor], tape_out: Option<&mut (Tape, Vec<Var>)>| -> f64 {
                let mut tape = Tape::new();
                let w1 = tape.leaf(ps[0].clone());
                let b1 = tape.leaf(ps[1].clone());
                let w2 = tape.leaf(ps[2].clone());
                let s = tape.leaf(ps[3].clone());
                let x = tape.leaf(input.clone());
                let h = tape.matmul(x, w1);
                let h = tape.add_row(h, b1);
                let h = tape.relu(h);
                let h = tape.matmul(h, w2);
                let habs = tape.abs(h);
                let hs = tape.mul_scalar(habs, s);
                let hc = tape.add_scalar(h, s);
                let joined = tape.concat_cols(&[hs, hc]);
                let lse = tape.logsumexp_cols(joined);
                let centered = tape.sub_col(joined, lse);
                let probs = tape.exp(centered);
                let picked = tape.col(probs, 1);
                let clamped = tape.clamp(h, -0.7, 0.9);
                let sc = tape.sum_cols(clamped);
                let mr = tape.mean_rows(probs);
                let safe = tape.clamp(mr, 1e-12, 1.0);
                let lnp = tape.ln(safe);
                let ent = tape.mul(safe, lnp);
                let t1 = tape.sum(picked);
                let t2 = tape.sum(sc);
                let t3 = tape.sum(ent);
                let t12 = tape.add(t1, t2);
                let loss = tape.add(t12, t3);
                let v = tape.value(loss).item();
                if let Some(slot) = tape_out {
                    *slot = (tape, vec![w1, b1, w2, s, loss]);
                }
                v
            };

            let mut slot = (Tape::new(), Vec::new());
            eval(&params, Some(&mut slot));
            let (tape, vars) = slot;
            let loss_var = vars[4];
            let analytic = gradients(&tape, loss_var, &vars[..4]).unwrap();
            let numeric = finite_difference_grads(&params, DEFAULT_STEP, |ps| eval(ps, None));
            let err = max_relative_error(&analytic, &numeric);
            assert!(err <= 1e-4, "trial {trial}: relative error {err}");
        }
    }

    #[test]
    fn gaussian_logpdf_tape_matches_tensor_version() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor::new(vec![2, 3], (0..6).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .unwrap();
        let mean = Tensor::new(vec![2, 3], (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .unwrap();
        let log_std =
            Tensor::new(vec![2, 3], (0..6).map(|_| rng.gen_range(-0.5..0.5)).collect()).unwrap();
        let std = log_std.map(f64::exp);
        let expected = gaussian_logpdf(&x, &mean, &std).unwrap();

        let mut tape = Tape::new();
        let xv = tape.leaf(x);
        let mv = tape.leaf(mean);
        let lv = tape.leaf(log_std);
        let out = tape.gaussian_logpdf(xv, mv, lv);
        for (a, b) in tape.value(out).iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
