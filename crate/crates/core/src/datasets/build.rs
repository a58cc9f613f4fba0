//! Builders for the synthetic dataset families.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::flow::{CouplingFlowDecoder, DEFAULT_FLOW_LAYERS};
use super::rotation::RotationDecoder;
use super::DatasetError;
use crate::scm::{Dag, Mechanism, Scm};

/// Dataset family identifier.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Family {
    /// Nonlinear two-variable SCM with graph `z1 -> z2`, warped by a
    /// coupling flow.
    Toy2d,
    /// Linear additive SCM on a random DAG over `n` variables, mapped by an
    /// SO(n) rotation.
    LinearScaling { n: usize },
}

impl Family {
    pub fn n_vars(&self) -> usize {
        match self {
            Family::Toy2d => 2,
            Family::LinearScaling { n } => *n,
        }
    }

    pub fn name(&self) -> String {
        match self {
            Family::Toy2d => "toy2d".into(),
            Family::LinearScaling { n } => format!("linear_scaling_n{n}"),
        }
    }
}

/// Specification of one generated dataset (all three splits).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSpec {
    #[serde(flatten)]
    pub family: Family,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub seed: u64,
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.n_train == 0 || self.n_val == 0 || self.n_test == 0 {
            return Err(DatasetError::Invalid("split sizes must be positive".into()));
        }
        if let Family::LinearScaling { n } = self.family {
            if n < 2 {
                return Err(DatasetError::Invalid(format!(
                    "linear scaling needs n >= 2 variables, got {n}"
                )));
            }
        }
        Ok(())
    }
}

/// The 2D toy world: `z1 ~ N(0,1)`, `z2 ~ N(0.3 z1^2 + 0.6 z1, 0.8^2)`, with
/// a randomly initialized coupling-flow decoder.
pub fn build_toy2d(seed: u64) -> (Scm, CouplingFlowDecoder) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x746f_7932_64);
    let dag = Dag::from_edges(2, &[(0, 1)]).unwrap();
    let scm = Scm::new(
        dag,
        vec![Mechanism::LinearAdditive { coefficients: vec![] }, Mechanism::Fixed2DToy],
    )
    .unwrap();
    let mut decoder = CouplingFlowDecoder::new(2, DEFAULT_FLOW_LAYERS, &mut rng);
    let reference: Vec<Vec<f64>> =
        (0..10_000).map(|_| scm.solve(&scm.sample_noise(&mut rng))).collect();
    decoder.calibrate(&reference);
    (scm, decoder)
}

/// Draw one linear coefficient from the two-component mixture with means
/// +-1 and standard deviation 0.3.
pub fn sample_linear_coefficient(rng: &mut impl Rng) -> f64 {
    let mean = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    mean + 0.3 * rng.sample::<f64, _>(StandardNormal)
}

/// A linear-scaling world: random DAG with edge probability 1/2 over a fixed
/// topological order, linear additive mechanisms with mixture coefficients,
/// and a random SO(n) decoder.
pub fn build_linear_scaling(n: usize, seed: u64) -> Result<(Scm, RotationDecoder), DatasetError> {
    if n < 2 {
        return Err(DatasetError::Invalid(format!("linear scaling needs n >= 2, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6c69_6e65_6172);
    let dag = Dag::random_with_order(n, 0.5, &mut rng);
    let mechanisms: Vec<Mechanism> = (0..n)
        .map(|j| Mechanism::LinearAdditive {
            coefficients: dag.parents(j).iter().map(|_| sample_linear_coefficient(&mut rng)).collect(),
        })
        .collect();
    let scm = Scm::new(dag, mechanisms)?;
    let decoder = RotationDecoder::sample(n, &mut rng);
    Ok((scm, decoder))
}
