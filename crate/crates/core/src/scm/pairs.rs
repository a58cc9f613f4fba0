//! The weakly supervised pair sampler: data pairs observed before and after a
//! random, unknown intervention with shared noise.

use rand::Rng;

use super::model::Scm;
use super::ScmError;

/// An intervention target set; empty or singleton in the atomic regime.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InterventionTarget {
    targets: Vec<usize>,
}

impl InterventionTarget {
    pub fn empty() -> Self {
        InterventionTarget { targets: vec![] }
    }

    pub fn single(i: usize) -> Self {
        InterventionTarget { targets: vec![i] }
    }

    pub fn from_members(mut members: Vec<usize>) -> Self {
        members.sort_unstable();
        members.dedup();
        InterventionTarget { targets: members }
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn is_atomic(&self) -> bool {
        self.targets.len() <= 1
    }

    pub fn contains(&self, i: usize) -> bool {
        self.targets.contains(&i)
    }

    pub fn members(&self) -> &[usize] {
        &self.targets
    }

    /// The single member of an atomic target, or None for the empty set.
    pub fn as_atomic(&self) -> Option<usize> {
        self.targets.first().copied()
    }

    /// Index into the `n + 1` atomic options: 0 for the empty set, `i + 1`
    /// for the singleton `{i}`.
    pub fn atomic_index(&self) -> usize {
        match self.as_atomic() {
            None => 0,
            Some(i) => i + 1,
        }
    }

    pub fn from_atomic_index(idx: usize) -> Self {
        if idx == 0 {
            Self::empty()
        } else {
            Self::single(idx - 1)
        }
    }
}

/// Distribution over the atomic targets `{∅, {0}, .., {n-1}}`.
#[derive(Clone, Debug)]
pub struct InterventionPrior {
    probs: Vec<f64>,
}

impl InterventionPrior {
    /// Uniform over all `n + 1` atomic options.
    pub fn uniform(n: usize) -> Self {
        InterventionPrior { probs: vec![1.0 / (n + 1) as f64; n + 1] }
    }

    /// Only the empty intervention.
    pub fn empty_only(n: usize) -> Self {
        let mut probs = vec![0.0; n + 1];
        probs[0] = 1.0;
        InterventionPrior { probs }
    }

    pub fn new(probs: Vec<f64>) -> Result<Self, ScmError> {
        let total: f64 = probs.iter().sum();
        if probs.iter().any(|&p| p < 0.0) || (total - 1.0).abs() > 1e-9 {
            return Err(ScmError::Contract("intervention prior must be a distribution".into()));
        }
        Ok(InterventionPrior { probs })
    }

    pub fn has_full_support(&self) -> bool {
        self.probs.iter().all(|&p| p > 0.0)
    }

    pub fn n_options(&self) -> usize {
        self.probs.len()
    }

    pub fn prob(&self, atomic_index: usize) -> f64 {
        self.probs[atomic_index]
    }

    pub fn sample(&self, rng: &mut impl Rng) -> InterventionTarget {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (idx, &p) in self.probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return InterventionTarget::from_atomic_index(idx);
            }
        }
        InterventionTarget::from_atomic_index(self.probs.len() - 1)
    }
}

/// Ground-truth latent state attached to a generated pair.
#[derive(Clone, Debug, PartialEq)]
pub struct PairTruth {
    pub z: Vec<f64>,
    pub z_post: Vec<f64>,
    pub noise: Vec<f64>,
    pub noise_post: Vec<f64>,
    pub target: InterventionTarget,
}

/// One weakly supervised sample: data before and after an intervention.
#[derive(Clone, Debug, PartialEq)]
pub struct WeakPair {
    pub x: Vec<f64>,
    pub x_post: Vec<f64>,
    pub truth: Option<PairTruth>,
}

impl WeakPair {
    pub fn truth(&self) -> Result<&PairTruth, ScmError> {
        self.truth.as_ref().ok_or_else(|| {
            ScmError::Contract("pair carries no ground truth".into())
        })
    }
}

/// Map from causal variables to the data space.
pub trait Decoder {
    fn latent_dim(&self) -> usize;
    fn data_dim(&self) -> usize;
    fn decode(&self, z: &[f64]) -> Vec<f64>;
}

/// Identity decoder over the latent space itself.
pub struct IdentityDecoder(pub usize);

impl Decoder for IdentityDecoder {
    fn latent_dim(&self) -> usize {
        self.0
    }
    fn data_dim(&self) -> usize {
        self.0
    }
    fn decode(&self, z: &[f64]) -> Vec<f64> {
        z.to_vec()
    }
}

/// Sample weakly supervised pairs with full ground truth.
pub fn sample_weak_pairs(
    scm: &Scm,
    decoder: &dyn Decoder,
    n_samples: usize,
    prior: &InterventionPrior,
    rng: &mut impl Rng,
) -> Result<Vec<WeakPair>, ScmError> {
    if decoder.latent_dim() != scm.n() {
        return Err(ScmError::Contract(format!(
            "decoder expects {} latents, SCM has {}",
            decoder.latent_dim(),
            scm.n()
        )));
    }
    if prior.n_options() != scm.n() + 1 {
        return Err(ScmError::Contract("intervention prior arity mismatch".into()));
    }
    let mut out = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let noise = scm.sample_noise(rng);
        let z = scm.solve(&noise);
        let target = prior.sample(rng);
        let (z_post, noise_post) = scm.intervene_sample(&noise, &target, rng);
        let x = decoder.decode(&z);
        let x_post = decoder.decode(&z_post);
        out.push(WeakPair {
            x,
            x_post,
            truth: Some(PairTruth { z, z_post, noise, noise_post, target }),
        });
    }
    Ok(out)
}

/// Check the noise-invariance pattern on every pair: non-targeted noise
/// encodings equal exactly, targeted ones differ.
pub fn verify_noise_invariance(pairs: &[WeakPair]) -> Result<bool, ScmError> {
    for pair in pairs {
        let truth = pair.truth()?;
        let n = truth.noise.len();
        for i in 0..n {
            let equal = truth.noise[i] == truth.noise_post[i];
            if truth.target.contains(i) {
                if equal {
                    return Ok(false);
                }
            } else if !equal {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scm::dag::Dag;
    use crate::scm::mechanism::Mechanism;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy2d() -> Scm {
        let dag = Dag::from_edges(2, &[(0, 1)]).unwrap();
        Scm::new(
            dag,
            vec![Mechanism::LinearAdditive { coefficients: vec![] }, Mechanism::Fixed2DToy],
        )
        .unwrap()
    }

    #[test]
    fn zero_samples_gives_empty_list() {
        let scm = toy2d();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pairs = sample_weak_pairs(
            &scm,
            &IdentityDecoder(2),
            0,
            &InterventionPrior::uniform(2),
            &mut rng,
        )
        .unwrap();
        assert!(pairs.is_empty());
    }

    #[test]
    fn empty_only_prior_means_identical_pairs() {
        let scm = toy2d();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pairs = sample_weak_pairs(
            &scm,
            &IdentityDecoder(2),
            100,
            &InterventionPrior::empty_only(2),
            &mut rng,
        )
        .unwrap();
        for p in &pairs {
            assert_eq!(p.x, p.x_post);
        }
    }

    #[test]
    fn uniform_prior_target_frequencies_concentrate() {
        let scm = toy2d();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pairs = sample_weak_pairs(
            &scm,
            &IdentityDecoder(2),
            30_000,
            &InterventionPrior::uniform(2),
            &mut rng,
        )
        .unwrap();
        let mut counts = [0usize; 3];
        for p in &pairs {
            counts[p.truth().unwrap().target.atomic_index()] += 1;
        }
        for &c in &counts {
            let freq = c as f64 / 30_000.0;
            assert!((freq - 1.0 / 3.0).abs() < 0.02, "freq {freq}");
        }
    }

    #[test]
    fn generated_pairs_satisfy_noise_invariance() {
        let scm = toy2d();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pairs = sample_weak_pairs(
            &scm,
            &IdentityDecoder(2),
            10_000,
            &InterventionPrior::uniform(2),
            &mut rng,
        )
        .unwrap();
        assert!(verify_noise_invariance(&pairs).unwrap());
        // Resampled targets almost surely differ from the original noise.
        let clashes = pairs
            .iter()
            .filter_map(|p| p.truth.as_ref())
            .filter(|t| {
                t.target.as_atomic().is_some_and(|i| t.noise[i] == t.noise_post[i])
            })
            .count();
        assert_eq!(clashes, 0);
    }

    #[test]
    fn corrupted_pair_fails_invariance() {
        let scm = toy2d();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut pairs = sample_weak_pairs(
            &scm,
            &IdentityDecoder(2),
            10,
            &InterventionPrior::empty_only(2),
            &mut rng,
        )
        .unwrap();
        pairs[3].truth.as_mut().unwrap().noise_post[0] += 0.5;
        assert!(!verify_noise_invariance(&pairs).unwrap());
    }

    #[test]
    fn missing_truth_is_contract_error() {
        let pairs = vec![WeakPair { x: vec![0.0], x_post: vec![0.0], truth: None }];
        assert!(matches!(verify_noise_invariance(&pairs), Err(ScmError::Contract(_))));
    }
}
