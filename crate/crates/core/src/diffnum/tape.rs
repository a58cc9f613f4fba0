//! Reverse-mode automatic differentiation on a flat operation tape.
//!
//! A `Tape` records every operation of a forward pass; `backward` replays the
//! tape in reverse, accumulating gradients into per-node buffers. Graphs are
//! rebuilt from scratch for every training step.

use super::tensor::{matmul_nt_into, matmul_tn_into, Tensor};
use super::DiffError;

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Matmul { a: Var, b: Var },
    /// `[m,n] + [n]`, bias broadcast over rows.
    AddRow { a: Var, bias: Var },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Relu { a: Var },
    Exp { a: Var },
    Ln { a: Var },
    Abs { a: Var },
    Neg { a: Var },
    Scale { a: Var, c: f64 },
    AddConst { a: Var },
    Clamp { a: Var, lo: f64, hi: f64 },
    /// Sum of all elements, yields a scalar.
    Sum { a: Var },
    /// `[m,n] -> [m,1]`, sum over columns.
    SumCols { a: Var },
    /// `[m,n] -> [1,n]`, mean over rows.
    MeanRows { a: Var },
    /// `[m,n] -> [m,1]`, stable log-sum-exp over columns.
    LogSumExpCols { a: Var },
    /// `[m,n] - [m,1]` broadcast over columns.
    SubCol { a: Var, v: Var },
    /// Extract column `j` as `[m,1]`.
    Col { a: Var, j: usize },
    /// Concatenate along columns.
    ConcatCols { parts: Vec<Var> },
    /// Tensor times a scalar variable.
    MulScalar { a: Var, s: Var },
    /// Tensor plus a scalar variable.
    AddScalar { a: Var, s: Var },
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Gradients produced by [`Tape::backward`], indexed by `Var`.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`; zero tensors are returned for
    /// nodes the loss does not depend on.
    pub fn wrt(&self, v: Var, shape: &[usize]) -> Tensor {
        match &self.grads[v.0] {
            Some(t) => t.clone(),
            None => Tensor::zeros(shape),
        }
    }
}

/// Reverse-mode AD tape.
pub struct Tape {
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::with_capacity(256) }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    /// Register a tensor (parameter or constant) as a leaf.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(Op::Leaf, t)
    }

    pub fn scalar(&mut self, x: f64) -> Var {
        self.leaf(Tensor::scalar(x))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self
            .value(a)
            .matmul(self.value(b))
            .unwrap_or_else(|e| panic!("tape matmul: {e}"));
        self.push(Op::Matmul { a, b }, v)
    }

    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(bias));
        assert_eq!(av.cols(), bv.len(), "add_row width mismatch");
        let n = av.cols();
        let mut out = av.clone();
        for row in out.data_mut().chunks_mut(n) {
            for (o, &b) in row.iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        self.push(Op::AddRow { a, bias }, out)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_with(self.value(b), |x, y| x + y);
        self.push(Op::Add { a, b }, v)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_with(self.value(b), |x, y| x - y);
        self.push(Op::Sub { a, b }, v)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_with(self.value(b), |x, y| x * y);
        self.push(Op::Mul { a, b }, v)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(Op::Relu { a }, v)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::exp);
        self.push(Op::Exp { a }, v)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::ln);
        self.push(Op::Ln { a }, v)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::abs);
        self.push(Op::Abs { a }, v)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| -x);
        self.push(Op::Neg { a }, v)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| c * x);
        self.push(Op::Scale { a, c }, v)
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x + c);
        self.push(Op::AddConst { a }, v)
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let v = self.value(a).map(|x| x.clamp(lo, hi));
        self.push(Op::Clamp { a, lo, hi }, v)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).iter().sum());
        self.push(Op::Sum { a }, v)
    }

    pub fn sum_cols(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let m = av.rows();
        let mut out = Vec::with_capacity(m);
        for i in 0..m {
            out.push(av.row(i).iter().sum());
        }
        let t = Tensor::new(vec![m, 1], out).unwrap();
        self.push(Op::SumCols { a }, t)
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let (m, n) = (av.rows(), av.cols());
        assert!(m > 0, "mean_rows on empty batch");
        let mut out = vec![0.0; n];
        for i in 0..m {
            for (o, &x) in out.iter_mut().zip(av.row(i)) {
                *o += x;
            }
        }
        for o in &mut out {
            *o /= m as f64;
        }
        let t = Tensor::new(vec![1, n], out).unwrap();
        self.push(Op::MeanRows { a }, t)
    }

    pub fn logsumexp_cols(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let m = av.rows();
        let mut out = Vec::with_capacity(m);
        for i in 0..m {
            let row = av.row(i);
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let s: f64 = row.iter().map(|&x| (x - mx).exp()).sum();
            out.push(mx + s.ln());
        }
        let t = Tensor::new(vec![m, 1], out).unwrap();
        self.push(Op::LogSumExpCols { a }, t)
    }

    pub fn sub_col(&mut self, a: Var, v: Var) -> Var {
        let (av, vv) = (self.value(a), self.value(v));
        assert_eq!(vv.shape(), &[av.rows(), 1], "sub_col shape mismatch");
        let n = av.cols();
        let mut out = av.clone();
        for (i, row) in out.data_mut().chunks_mut(n).enumerate() {
            let s = vv.data()[i];
            for o in row {
                *o -= s;
            }
        }
        self.push(Op::SubCol { a, v }, out)
    }

    pub fn col(&mut self, a: Var, j: usize) -> Var {
        let av = self.value(a);
        let m = av.rows();
        assert!(j < av.cols(), "col index out of range");
        let data: Vec<f64> = (0..m).map(|i| av.at2(i, j)).collect();
        let t = Tensor::new(vec![m, 1], data).unwrap();
        self.push(Op::Col { a, j }, t)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let m = self.value(parts[0]).rows();
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(m * total);
        for i in 0..m {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let t = Tensor::new(vec![m, total], data).unwrap();
        self.push(Op::ConcatCols { parts: parts.to_vec() }, t)
    }

    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Var {
        assert!(self.value(s).is_scalar(), "mul_scalar: s must be scalar");
        let sv = self.value(s).item();
        let v = self.value(a).map(|x| x * sv);
        self.push(Op::MulScalar { a, s }, v)
    }

    pub fn add_scalar(&mut self, a: Var, s: Var) -> Var {
        assert!(self.value(s).is_scalar(), "add_scalar: s must be scalar");
        let sv = self.value(s).item();
        let v = self.value(a).map(|x| x + sv);
        self.push(Op::AddScalar { a, s }, v)
    }

    /// Elementwise log N(x; mean, exp(log_std)^2) from tape variables.
    pub fn gaussian_logpdf(&mut self, x: Var, mean: Var, log_std: Var) -> Var {
        const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;
        let diff = self.sub(x, mean);
        let neg_log_std = self.neg(log_std);
        let inv_std = self.exp(neg_log_std);
        let zscore = self.mul(diff, inv_std);
        let sq = self.mul(zscore, zscore);
        let quad = self.scale(sq, -0.5);
        let a = self.sub(quad, log_std);
        self.add_const(a, -HALF_LN_2PI)
    }

    /// Run reverse accumulation from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients, DiffError> {
        if !self.value(loss).is_scalar() {
            return Err(DiffError::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let g = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::Matmul { a, b } => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                    {
                        let da = ensure(&mut grads, *a, av.shape());
                        matmul_nt_into(g.data(), bv.data(), da.data_mut(), m, n, k);
                    }
                    let db = ensure(&mut grads, *b, bv.shape());
                    matmul_tn_into(av.data(), g.data(), db.data_mut(), m, k, n);
                }
                Op::AddRow { a, bias } => {
                    accumulate(&mut grads, *a, g.data());
                    let n = self.value(*bias).len();
                    let db = ensure(&mut grads, *bias, &[n]);
                    for row in g.data().chunks(n) {
                        for (o, &x) in db.data_mut().iter_mut().zip(row) {
                            *o += x;
                        }
                    }
                }
                Op::Add { a, b } => {
                    accumulate(&mut grads, *a, g.data());
                    accumulate(&mut grads, *b, g.data());
                }
                Op::Sub { a, b } => {
                    accumulate(&mut grads, *a, g.data());
                    let db = ensure(&mut grads, *b, self.value(*b).shape());
                    for (o, &x) in db.data_mut().iter_mut().zip(g.data()) {
                        *o -= x;
                    }
                }
                Op::Mul { a, b } => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    {
                        let da = ensure(&mut grads, *a, av.shape());
                        for ((o, &x), &y) in da.data_mut().iter_mut().zip(g.data()).zip(bv.data())
                        {
                            *o += x * y;
                        }
                    }
                    let db = ensure(&mut grads, *b, bv.shape());
                    for ((o, &x), &y) in db.data_mut().iter_mut().zip(g.data()).zip(av.data()) {
                        *o += x * y;
                    }
                }
                Op::Relu { a } => {
                    let av = self.value(*a);
                    let da = ensure(&mut grads, *a, av.shape());
                    for ((o, &x), &inp) in da.data_mut().iter_mut().zip(g.data()).zip(av.data()) {
                        if inp > 0.0 {
                            *o += x;
                        }
                    }
                }
                Op::Exp { a } => {
                    let out = &node.value;
                    let da = ensure(&mut grads, *a, out.shape());
                    for ((o, &x), &y) in da.data_mut().iter_mut().zip(g.data()).zip(out.data()) {
                        *o += x * y;
                    }
                }
                Op::Ln { a } => {
                    let av = self.value(*a);
                    let da = ensure(&mut grads, *a, av.shape());
                    for ((o, &x), &inp) in da.data_mut().iter_mut().zip(g.data()).zip(av.data()) {
                        *o += x / inp;
                    }
                }
                Op::Abs { a } => {
                    let av = self.value(*a);
                    let da = ensure(&mut grads, *a, av.shape());
                    for ((o, &x), &inp) in da.data_mut().iter_mut().zip(g.data()).zip(av.data()) {
                        *o += x * inp.signum() * if inp == 0.0 { 0.0 } else { 1.0 };
                    }
                }
                Op::Neg { a } => {
                    let da = ensure(&mut grads, *a, self.value(*a).shape());
                    for (o, &x) in da.data_mut().iter_mut().zip(g.data()) {
                        *o -= x;
                    }
                }
                Op::Scale { a, c } => {
                    let da = ensure(&mut grads, *a, self.value(*a).shape());
                    for (o, &x) in da.data_mut().iter_mut().zip(g.data()) {
                        *o += c * x;
                    }
                }
                Op::AddConst { a } => {
                    accumulate(&mut grads, *a, g.data());
                }
                Op::Clamp { a, lo, hi } => {
                    let av = self.value(*a);
                    let da = ensure(&mut grads, *a, av.shape());
                    for ((o, &x), &inp) in da.data_mut().iter_mut().zip(g.data()).zip(av.data()) {
                        if inp >= *lo && inp <= *hi {
                            *o += x;
                        }
                    }
                }
                Op::Sum { a } => {
                    let gi = g.item();
                    let da = ensure(&mut grads, *a, self.value(*a).shape());
                    for o in da.data_mut() {
                        *o += gi;
                    }
                }
                Op::SumCols { a } => {
                    let av = self.value(*a);
                    let n = av.cols();
                    let da = ensure(&mut grads, *a, av.shape());
                    for (i, row) in da.data_mut().chunks_mut(n).enumerate() {
                        let gi = g.data()[i];
                        for o in row {
                            *o += gi;
                        }
                    }
                }
                Op::MeanRows { a } => {
                    let av = self.value(*a);
                    let (m, n) = (av.rows(), av.cols());
                    let da = ensure(&mut grads, *a, av.shape());
                    let inv_m = 1.0 / m as f64;
                    for row in da.data_mut().chunks_mut(n) {
                        for (o, &x) in row.iter_mut().zip(g.data()) {
                            *o += x * inv_m;
                        }
                    }
                }
                Op::LogSumExpCols { a } => {
                    let av = self.value(*a);
                    let (m, n) = (av.rows(), av.cols());
                    let out = &node.value;
                    let da = ensure(&mut grads, *a, av.shape());
                    for i in 0..m {
                        let gi = g.data()[i];
                        let lse = out.data()[i];
                        let src = &av.data()[i * n..(i + 1) * n];
                        let dst = &mut da.data_mut()[i * n..(i + 1) * n];
                        for (o, &x) in dst.iter_mut().zip(src) {
                            *o += gi * (x - lse).exp();
                        }
                    }
                }
                Op::SubCol { a, v } => {
                    accumulate(&mut grads, *a, g.data());
                    let m = self.value(*v).rows();
                    let n = self.value(*a).cols();
                    let dv = ensure(&mut grads, *v, &[m, 1]);
                    for (i, row) in g.data().chunks(n).enumerate() {
                        dv.data_mut()[i] -= row.iter().sum::<f64>();
                    }
                }
                Op::Col { a, j } => {
                    let av = self.value(*a);
                    let (m, n) = (av.rows(), av.cols());
                    let da = ensure(&mut grads, *a, av.shape());
                    for i in 0..m {
                        da.data_mut()[i * n + j] += g.data()[i];
                    }
                }
                Op::ConcatCols { parts } => {
                    let m = node.value.rows();
                    let total = node.value.cols();
                    let mut offset = 0;
                    for &p in parts {
                        let c = self.value(p).cols();
                        let dp = ensure(&mut grads, p, &[m, c]);
                        for i in 0..m {
                            let src = &g.data()[i * total + offset..i * total + offset + c];
                            let dst = &mut dp.data_mut()[i * c..(i + 1) * c];
                            for (o, &x) in dst.iter_mut().zip(src) {
                                *o += x;
                            }
                        }
                        offset += c;
                    }
                }
                Op::MulScalar { a, s } => {
                    let sv = self.value(*s).item();
                    let av = self.value(*a);
                    {
                        let da = ensure(&mut grads, *a, av.shape());
                        for (o, &x) in da.data_mut().iter_mut().zip(g.data()) {
                            *o += sv * x;
                        }
                    }
                    let ds = ensure(&mut grads, *s, &[]);
                    let acc: f64 =
                        g.data().iter().zip(av.data()).map(|(&x, &y)| x * y).sum();
                    ds.data_mut()[0] += acc;
                }
                Op::AddScalar { a, s } => {
                    accumulate(&mut grads, *a, g.data());
                    let ds = ensure(&mut grads, *s, &[]);
                    ds.data_mut()[0] += g.data().iter().sum::<f64>();
                }
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

fn ensure<'g>(grads: &'g mut [Option<Tensor>], v: Var, shape: &[usize]) -> &'g mut Tensor {
    if grads[v.0].is_none() {
        grads[v.0] = Some(Tensor::zeros(shape));
    }
    grads[v.0].as_mut().unwrap()
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: &[f64]) {
    match &mut grads[v.0] {
        Some(t) => {
            for (o, &x) in t.data_mut().iter_mut().zip(g) {
                *o += x;
            }
        }
        None => {
            let mut t = Vec::with_capacity(g.len());
            t.extend_from_slice(g);
            grads[v.0] = Some(match g.len() {
                1 => Tensor::scalar(t[0]),
                _ => Tensor::vector(t),
            });
        }
    }
}

/// Reverse-mode gradients of a scalar loss with respect to `params`.
pub fn gradients(tape: &Tape, loss: Var, params: &[Var]) -> Result<Vec<Tensor>, DiffError> {
    let grads = tape.backward(loss)?;
    Ok(params
        .iter()
        .map(|&p| grads.wrt(p, tape.value(p).shape()))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_sum_gives_ones() {
        let mut tape = Tape::new();
        let p = tape.leaf(Tensor::new(vec![2, 3], vec![1.0, -2.0, 0.5, 3.0, 0.0, 4.0]).unwrap());
        let loss = tape.sum(p);
        let g = gradients(&tape, loss, &[p]).unwrap();
        assert_eq!(g[0].data(), &[1.0; 6]);
    }

    #[test]
    fn loss_half_norm_squared_gives_p() {
        let mut tape = Tape::new();
        let vals = vec![1.0, -2.0, 0.5, 3.0];
        let p = tape.leaf(Tensor::new(vec![4], vals.clone()).unwrap());
        let sq = tape.mul(p, p);
        let s = tape.sum(sq);
        let loss = tape.scale(s, 0.5);
        let g = gradients(&tape, loss, &[p]).unwrap();
        assert_eq!(g[0].data(), vals.as_slice());
    }

    #[test]
    fn non_scalar_loss_is_contract_error() {
        let mut tape = Tape::new();
        let p = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(tape.backward(p), Err(DiffError::Contract(_))));
    }

    #[test]
    fn logsumexp_matches_naive() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, -5.0, 0.0, 5.0]).unwrap());
        let lse = tape.logsumexp_cols(a);
        let naive0 = (1f64.exp() + 2f64.exp() + 3f64.exp()).ln();
        let naive1 = ((-5f64).exp() + 1.0 + 5f64.exp()).ln();
        assert!((tape.value(lse).data()[0] - naive0).abs() < 1e-12);
        assert!((tape.value(lse).data()[1] - naive1).abs() < 1e-12);
    }

    #[test]
    fn concat_and_col_roundtrip() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let c0 = tape.col(a, 0);
        let c1 = tape.col(a, 1);
        let back = tape.concat_cols(&[c0, c1]);
        assert_eq!(tape.value(back).data(), tape.value(a).data());
    }
}
