//! Central finite differences, used as an independent oracle for the
//! reverse-mode gradients throughout the test suites.

use super::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-5;

/// Central-difference gradient of `f` with respect to every element of every
/// parameter tensor. `f` must be a deterministic function of the parameters.
pub fn finite_difference_grads(
    params: &[Tensor],
    h: f64,
    mut f: impl FnMut(&[Tensor]) -> f64,
) -> Vec<Tensor> {
    let mut work: Vec<Tensor> = params.to_vec();
    let mut out = Vec::with_capacity(params.len());
    for pi in 0..params.len() {
        let mut grad = Tensor::zeros(params[pi].shape());
        for ei in 0..params[pi].len() {
            let orig = work[pi].data()[ei];
            work[pi].data_mut()[ei] = orig + h;
            let f_plus = f(&work);
            work[pi].data_mut()[ei] = orig - h;
            let f_minus = f(&work);
            work[pi].data_mut()[ei] = orig;
            grad.data_mut()[ei] = (f_plus - f_minus) / (2.0 * h);
        }
        out.push(grad);
    }
    out
}

/// Worst relative disagreement between two gradient lists. The denominator is
/// floored at 1e-6 so that roundoff on near-zero entries does not dominate.
pub fn max_relative_error(analytic: &[Tensor], numeric: &[Tensor]) -> f64 {
    let mut worst: f64 = 0.0;
    for (a, n) in analytic.iter().zip(numeric) {
        assert_eq!(a.shape(), n.shape(), "gradient shape mismatch");
        for (&av, &nv) in a.iter().zip(n.iter()) {
            let denom = av.abs().max(nv.abs()).max(1e-6);
            worst = worst.max((av - nv).abs() / denom);
        }
    }
    worst
}
