//! Causal mechanisms: maps from (noise, parent values) to a causal variable,
//! pointwise diffeomorphic in the noise argument.

use rand::Rng;

use super::ScmError;
use crate::diffnum::Mlp;

/// A per-variable causal mechanism. Noise enters strictly monotonically, so
/// each mechanism is invertible in its noise argument for any parent values.
#[derive(Clone, Debug)]
pub enum Mechanism {
    /// `z = eps + sum_k a_k * z_parent_k`; coefficients are keyed by parent
    /// index and must align with the DAG's parent set.
    LinearAdditive { coefficients: Vec<f64> },
    /// `z = shift(parents) + exp(tanh(scale_raw(parents))) * eps`, with the
    /// scale and shift computed by fully connected networks.
    AffineConditional { scale_net: Mlp, shift_net: Mlp },
    /// The 2D toy effect mechanism: `z = 0.3 p^2 + 0.6 p + 0.8 eps` for a
    /// single parent `p`.
    Fixed2DToy,
}

impl Mechanism {
    /// Number of parent values this mechanism consumes.
    pub fn arity(&self) -> usize {
        match self {
            Mechanism::LinearAdditive { coefficients } => coefficients.len(),
            Mechanism::AffineConditional { shift_net, .. } => shift_net.input_width(),
            Mechanism::Fixed2DToy => 1,
        }
    }

    fn affine_parts(&self, parents: &[f64]) -> (f64, f64) {
        match self {
            Mechanism::LinearAdditive { coefficients } => {
                let shift: f64 =
                    coefficients.iter().zip(parents).map(|(a, p)| a * p).sum();
                (shift, 1.0)
            }
            Mechanism::AffineConditional { scale_net, shift_net } => {
                let shift = shift_net.forward_row(parents).expect("shift net arity")[0];
                let raw = scale_net.forward_row(parents).expect("scale net arity")[0];
                (shift, raw.tanh().exp())
            }
            Mechanism::Fixed2DToy => {
                let p = parents[0];
                (0.3 * p * p + 0.6 * p, 0.8)
            }
        }
    }

    /// Evaluate `f(eps; parents)`.
    pub fn apply(&self, eps: f64, parents: &[f64]) -> f64 {
        debug_assert_eq!(parents.len(), self.arity(), "mechanism arity mismatch");
        let (shift, scale) = self.affine_parts(parents);
        shift + scale * eps
    }

    /// Invert `f(.; parents)` at `z` (closed form; every kind is affine in
    /// its noise argument).
    pub fn invert(&self, z: f64, parents: &[f64]) -> Result<f64, ScmError> {
        let (shift, scale) = self.affine_parts(parents);
        if scale.abs() < 1e-300 || !scale.is_finite() {
            return Err(ScmError::Numeric(format!("mechanism not invertible: scale {scale}")));
        }
        Ok((z - shift) / scale)
    }

    /// Invert by monotone bisection with bracket expansion. Used as an
    /// independent oracle against the closed-form inverse.
    pub fn invert_bisect(&self, z: f64, parents: &[f64]) -> Result<f64, ScmError> {
        let f = |e: f64| self.apply(e, parents);
        let increasing = f(1.0) > f(-1.0);
        let (mut lo, mut hi) = (-1.0f64, 1.0f64);
        let target_between = |a: f64, b: f64| {
            let (fa, fb) = (f(a), f(b));
            (fa <= z && z <= fb) || (fb <= z && z <= fa)
        };
        let mut span = 1.0;
        for _ in 0..200 {
            if target_between(lo, hi) {
                break;
            }
            span *= 2.0;
            lo -= span;
            hi += span;
        }
        if !target_between(lo, hi) {
            return Err(ScmError::Numeric(format!("bisection bracket not found for z={z}")));
        }
        for _ in 0..500 {
            if hi - lo < 1e-12 {
                break;
            }
            let mid = 0.5 * (lo + hi);
            let fm = f(mid);
            let go_right = if increasing { fm < z } else { fm > z };
            if go_right {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// Numerically check strict monotonicity of `eps -> f(eps; parents)` on a
    /// 101-point grid over [-5, 5] for 20 random parent configurations.
    pub fn check_diffeomorphic(&self, rng: &mut impl Rng) -> bool {
        let configs = if self.arity() == 0 { 1 } else { 20 };
        for _ in 0..configs {
            let parents: Vec<f64> = (0..self.arity()).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let mut prev = self.apply(-5.0, &parents);
            let mut dir = 0.0f64;
            for k in 1..=100 {
                let eps = -5.0 + 0.1 * k as f64;
                let v = self.apply(eps, &parents);
                let step = v - prev;
                if step == 0.0 {
                    return false;
                }
                if dir == 0.0 {
                    dir = step.signum();
                } else if step.signum() != dir {
                    return false;
                }
                prev = v;
            }
        }
        true
    }

    /// Random conditional affine mechanism with MLP scale/shift heads.
    pub fn random_affine(arity: usize, hidden: &[usize], rng: &mut impl Rng) -> Self {
        assert!(arity >= 1, "affine conditional mechanisms need at least one parent");
        let mut widths = vec![arity];
        widths.extend_from_slice(hidden);
        widths.push(1);
        Mechanism::AffineConditional {
            scale_net: Mlp::new(&widths, rng),
            shift_net: Mlp::new(&widths, rng),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn linear_apply_and_invert() {
        let m = Mechanism::LinearAdditive { coefficients: vec![2.0, -1.0] };
        let z = m.apply(0.5, &[1.0, 3.0]);
        assert_eq!(z, 0.5 + 2.0 - 3.0);
        assert_eq!(m.invert(z, &[1.0, 3.0]).unwrap(), 0.5);
    }

    #[test]
    fn toy_mechanism_values() {
        let m = Mechanism::Fixed2DToy;
        assert_eq!(m.apply(0.0, &[0.0]), 0.0);
        let z = m.apply(1.0, &[1.0]);
        assert!((z - (0.3 + 0.6 + 0.8)).abs() < 1e-15);
    }

    #[test]
    fn bisection_agrees_with_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mechs = vec![
            Mechanism::LinearAdditive { coefficients: vec![1.3] },
            Mechanism::Fixed2DToy,
            Mechanism::random_affine(1, &[16, 16], &mut rng),
        ];
        for m in &mechs {
            for _ in 0..50 {
                let parents = vec![rng.gen_range(-2.0..2.0)];
                let eps = rng.gen_range(-3.0..3.0);
                let z = m.apply(eps, &parents);
                let closed = m.invert(z, &parents).unwrap();
                let bisect = m.invert_bisect(z, &parents).unwrap();
                assert!((closed - eps).abs() < 1e-9);
                assert!((bisect - eps).abs() < 1e-9, "bisect {bisect} vs {eps}");
            }
        }
    }

    #[test]
    fn mechanisms_are_diffeomorphic_on_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        assert!(Mechanism::LinearAdditive { coefficients: vec![0.7, -0.2] }
            .check_diffeomorphic(&mut rng));
        assert!(Mechanism::Fixed2DToy.check_diffeomorphic(&mut rng));
        assert!(Mechanism::random_affine(2, &[16, 16], &mut rng).check_diffeomorphic(&mut rng));
    }
}
