//! SO(n) rotation decoder for the graph-scaling datasets.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::diffnum::Tensor;
use crate::linalg;
use crate::scm::Decoder;

/// Orthogonal decoder `x = Q z` with `det Q = +1`.
#[derive(Clone, Debug)]
pub struct RotationDecoder {
    q: Tensor,
}

impl RotationDecoder {
    /// Sample from the Haar measure on SO(n): QR of a Gaussian matrix with
    /// the R-diagonal sign correction, then one column flip if det = -1.
    pub fn sample(n: usize, rng: &mut impl Rng) -> Self {
        assert!(n >= 1);
        // Modified Gram-Schmidt on Gaussian columns.
        let mut cols: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..n).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        for j in 0..n {
            for k in 0..j {
                let proj: f64 = (0..n).map(|r| cols[j][r] * cols[k][r]).sum();
                for r in 0..n {
                    cols[j][r] -= proj * cols[k][r];
                }
            }
            // Normalizing by the (positive) residual norm keeps R_jj > 0,
            // which is the sign-corrected QR giving Haar measure on O(n).
            let norm: f64 = cols[j].iter().map(|v| v * v).sum::<f64>().sqrt();
            for v in &mut cols[j] {
                *v /= norm;
            }
        }
        let mut q = vec![0.0; n * n];
        for (j, col) in cols.iter().enumerate() {
            for r in 0..n {
                q[r * n + j] = col[r];
            }
        }
        if linalg::determinant(&q, n) < 0.0 {
            for r in 0..n {
                q[r * n] = -q[r * n];
            }
        }
        RotationDecoder { q: Tensor::new(vec![n, n], q).unwrap() }
    }

    pub fn matrix(&self) -> &Tensor {
        &self.q
    }

    /// Inverse map `Q^T x`.
    pub fn encode(&self, x: &[f64]) -> Vec<f64> {
        let n = self.q.rows();
        (0..n).map(|j| (0..n).map(|r| self.q.at2(r, j) * x[r]).sum()).collect()
    }
}

impl Decoder for RotationDecoder {
    fn latent_dim(&self) -> usize {
        self.q.rows()
    }

    fn data_dim(&self) -> usize {
        self.q.rows()
    }

    fn decode(&self, z: &[f64]) -> Vec<f64> {
        let n = self.q.rows();
        (0..n).map(|r| (0..n).map(|j| self.q.at2(r, j) * z[j]).sum()).collect()
    }
}
