//! Invertible coupling-flow decoder used to warp the 2D toy latents into the
//! data space: affine coupling layers interspersed with random permutations.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::diffnum::Mlp;
use crate::scm::Decoder;

#[derive(Clone, Debug)]
struct CouplingLayer {
    scale_net: Mlp,
    shift_net: Mlp,
    split: usize,
}

impl CouplingLayer {
    fn new(dim: usize, hidden: &[usize], rng: &mut impl Rng) -> Self {
        let split = dim / 2;
        let mut widths = vec![split];
        widths.extend_from_slice(hidden);
        widths.push(dim - split);
        CouplingLayer {
            scale_net: Mlp::new(&widths, rng),
            shift_net: Mlp::new(&widths, rng),
            split,
        }
    }

    // log-scale bounded via tanh so the layer stays well-conditioned.
    fn params(&self, head: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let raw = self.scale_net.forward_row(head).expect("coupling scale net");
        let shift = self.shift_net.forward_row(head).expect("coupling shift net");
        let log_scale = raw.iter().map(|r| r.tanh()).collect();
        (log_scale, shift)
    }

    fn forward(&self, v: &mut [f64]) -> f64 {
        let (head, tail) = v.split_at_mut(self.split);
        let (log_scale, shift) = self.params(head);
        let mut log_det = 0.0;
        for ((t, ls), sh) in tail.iter_mut().zip(&log_scale).zip(&shift) {
            *t = *t * ls.exp() + sh;
            log_det += ls;
        }
        log_det
    }

    fn inverse(&self, v: &mut [f64]) {
        let (head, tail) = v.split_at_mut(self.split);
        let (log_scale, shift) = self.params(head);
        for ((t, ls), sh) in tail.iter_mut().zip(&log_scale).zip(&shift) {
            *t = (*t - sh) * (-ls).exp();
        }
    }
}

/// Five affine coupling layers with fixed random permutations between them,
/// followed by a per-dimension affine standardization calibrated against a
/// reference latent sample so the data space stays well-conditioned.
#[derive(Clone, Debug)]
pub struct CouplingFlowDecoder {
    dim: usize,
    layers: Vec<CouplingLayer>,
    perms: Vec<Vec<usize>>,
    out_mean: Vec<f64>,
    out_std: Vec<f64>,
}

pub const DEFAULT_FLOW_LAYERS: usize = 5;
pub const DEFAULT_COUPLING_HIDDEN: [usize; 2] = [64, 64];

impl CouplingFlowDecoder {
    pub fn new(dim: usize, n_layers: usize, rng: &mut impl Rng) -> Self {
        assert!(dim >= 2, "coupling flows need at least two dimensions");
        let layers =
            (0..n_layers).map(|_| CouplingLayer::new(dim, &DEFAULT_COUPLING_HIDDEN, rng)).collect();
        let perms = (0..n_layers)
            .map(|_| {
                let mut p: Vec<usize> = (0..dim).collect();
                p.shuffle(rng);
                p
            })
            .collect();
        CouplingFlowDecoder {
            dim,
            layers,
            perms,
            out_mean: vec![0.0; dim],
            out_std: vec![1.0; dim],
        }
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    /// Calibrate the output standardization from a reference latent sample.
    pub fn calibrate(&mut self, z_samples: &[Vec<f64>]) {
        assert!(z_samples.len() >= 2, "calibration needs samples");
        let m = z_samples.len() as f64;
        let mut mean = vec![0.0; self.dim];
        let mut sq = vec![0.0; self.dim];
        for z in z_samples {
            let x = self.raw_decode(z);
            for d in 0..self.dim {
                mean[d] += x[d];
                sq[d] += x[d] * x[d];
            }
        }
        for d in 0..self.dim {
            mean[d] /= m;
            let var = (sq[d] / m - mean[d] * mean[d]).max(1e-12);
            self.out_mean[d] = mean[d];
            self.out_std[d] = var.sqrt();
        }
    }

    fn raw_decode(&self, z: &[f64]) -> Vec<f64> {
        let mut v = z.to_vec();
        for (layer, perm) in self.layers.iter().zip(&self.perms) {
            let mut permuted = vec![0.0; self.dim];
            for (src, &dst) in perm.iter().enumerate() {
                permuted[dst] = v[src];
            }
            v = permuted;
            layer.forward(&mut v);
        }
        v
    }

    /// Inverse map from data space back to latents.
    pub fn encode(&self, x: &[f64]) -> Vec<f64> {
        let mut v: Vec<f64> = x
            .iter()
            .zip(self.out_std.iter().zip(&self.out_mean))
            .map(|(&xv, (&s, &mu))| xv * s + mu)
            .collect();
        for (layer, perm) in self.layers.iter().zip(&self.perms).rev() {
            layer.inverse(&mut v);
            let mut un = vec![0.0; self.dim];
            for (src, &dst) in perm.iter().enumerate() {
                un[src] = v[dst];
            }
            v = un;
        }
        v
    }

    /// Log |det J| of the decode map at `z`.
    pub fn log_det_jacobian(&self, z: &[f64]) -> f64 {
        let mut v = z.to_vec();
        let mut log_det = 0.0;
        for (layer, perm) in self.layers.iter().zip(&self.perms) {
            let mut permuted = vec![0.0; self.dim];
            for (src, &dst) in perm.iter().enumerate() {
                permuted[dst] = v[src];
            }
            v = permuted;
            log_det += layer.forward(&mut v);
        }
        log_det - self.out_std.iter().map(|s| s.ln()).sum::<f64>()
    }
}

impl Decoder for CouplingFlowDecoder {
    fn latent_dim(&self) -> usize {
        self.dim
    }

    fn data_dim(&self) -> usize {
        self.dim
    }

    fn decode(&self, z: &[f64]) -> Vec<f64> {
        let v = self.raw_decode(z);
        v.iter()
            .zip(self.out_mean.iter().zip(&self.out_std))
            .map(|(&xv, (&mu, &s))| (xv - mu) / s)
            .collect()
    }
}
