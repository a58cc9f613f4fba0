//! Fully connected networks with ReLU activations.

use rand::Rng;

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use super::DiffError;

/// Hidden-layer activation. ReLU is the only supported choice.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
}

/// Multi-layer perceptron; activations are applied between layers but not
/// after the final one.
#[derive(Clone, Debug)]
pub struct Mlp {
    widths: Vec<usize>,
    weights: Vec<Tensor>,
    biases: Vec<Tensor>,
    activation: Activation,
}

/// Tape handles for one registration of an [`Mlp`]'s parameters.
pub struct MlpBinding {
    weights: Vec<Var>,
    biases: Vec<Var>,
}

impl Mlp {
    /// Kaiming-uniform weights (fan-in scaling), zero biases.
    pub fn new(widths: &[usize], rng: &mut impl Rng) -> Self {
        assert!(widths.len() >= 2, "an MLP needs at least input and output widths");
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in widths.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (6.0 / fan_in as f64).sqrt();
            let data: Vec<f64> =
                (0..fan_in * fan_out).map(|_| rng.gen_range(-bound..bound)).collect();
            weights.push(Tensor::new(vec![fan_in, fan_out], data).unwrap());
            biases.push(Tensor::zeros(&[fan_out]));
        }
        Mlp { widths: widths.to_vec(), weights, biases, activation: Activation::Relu }
    }

    pub fn zeros(widths: &[usize]) -> Self {
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let mut mlp = Mlp::new(widths, &mut rng);
        for w in &mut mlp.weights {
            for x in w.data_mut() {
                *x = 0.0;
            }
        }
        mlp
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn n_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn weight(&self, layer: usize) -> &Tensor {
        &self.weights[layer]
    }

    pub fn weight_mut(&mut self, layer: usize) -> &mut Tensor {
        &mut self.weights[layer]
    }

    pub fn bias_mut(&mut self, layer: usize) -> &mut Tensor {
        &mut self.biases[layer]
    }

    /// Pure forward pass over a `[batch, input]` tensor.
    pub fn forward(&self, input: &Tensor) -> Result<Tensor, DiffError> {
        if input.shape().len() != 2 || input.cols() != self.input_width() {
            return Err(DiffError::Shape(format!(
                "mlp expects [batch, {}], got {:?}",
                self.input_width(),
                input.shape()
            )));
        }
        let mut h = input.clone();
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut out = h.matmul(w)?;
            let n = out.cols();
            for row in out.data_mut().chunks_mut(n) {
                for (o, &bv) in row.iter_mut().zip(b.data()) {
                    *o += bv;
                }
            }
            if l + 1 < self.weights.len() {
                match self.activation {
                    Activation::Relu => {
                        for x in out.data_mut() {
                            *x = x.max(0.0);
                        }
                    }
                }
            }
            h = out;
        }
        Ok(h)
    }

    /// Forward pass over a single row.
    pub fn forward_row(&self, input: &[f64]) -> Result<Vec<f64>, DiffError> {
        let t = Tensor::new(vec![1, input.len()], input.to_vec())?;
        Ok(self.forward(&t)?.data().to_vec())
    }

    /// Register parameters on a tape.
    pub fn bind(&self, tape: &mut Tape) -> MlpBinding {
        let weights = self.weights.iter().map(|w| tape.leaf(w.clone())).collect();
        let biases = self.biases.iter().map(|b| tape.leaf(b.clone())).collect();
        MlpBinding { weights, biases }
    }

    /// Differentiable forward pass through bound parameters.
    pub fn forward_on(&self, tape: &mut Tape, binding: &MlpBinding, input: Var) -> Var {
        let mut h = input;
        let n = binding.weights.len();
        for l in 0..n {
            h = tape.matmul(h, binding.weights[l]);
            h = tape.add_row(h, binding.biases[l]);
            if l + 1 < n {
                h = tape.relu(h);
            }
        }
        h
    }

    pub fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            f(format!("{prefix}.w{l}"), w);
            f(format!("{prefix}.b{l}"), b);
        }
    }

    pub fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        for (l, (w, b)) in self.weights.iter_mut().zip(self.biases.iter_mut()).enumerate() {
            f(format!("{prefix}.w{l}"), w);
            f(format!("{prefix}.b{l}"), b);
        }
    }

    /// Mutable parameter references in the same order as `visit_params`.
    pub fn params_mut_list(&mut self) -> Vec<&mut Tensor> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| [w, b])
            .collect()
    }

    /// Binding vars in the same order as `visit_params`.
    pub fn binding_vars(binding: &MlpBinding) -> Vec<Var> {
        let mut out = Vec::with_capacity(binding.weights.len() * 2);
        for (w, b) in binding.weights.iter().zip(&binding.biases) {
            out.push(*w);
            out.push(*b);
        }
        out
    }
}

/// `forward_mlp` as a free function over the pure path.
pub fn forward_mlp(net: &Mlp, input: &Tensor) -> Result<Tensor, DiffError> {
    net.forward(input)
}
