use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Forward operation catalog accepted by [`Tape::apply`].
#[derive(Clone, Debug, PartialEq)]
pub enum OpKind {
    Add,
    Sub,
    Mul,
    Scale(f64),
    MatMul,
    /// `[m, n] + [n]`, the bias added to every row.
    BiasAdd,
    Relu,
    Tanh,
    Sigmoid,
    /// Softmax over the last axis.
    Softmax,
    Mean,
    Sum,
    /// `sum_k w[k] * x_k`; the first input is the weight vector.
    WeightedSum,
    /// Mean cross-entropy of `[batch, classes]` logits against labels.
    CrossEntropy(Vec<usize>),
    /// Fresh standard-normal samples; no gradient reaches the input.
    Noise,
}

impl OpKind {
    pub fn name(&self) -> &'static str {
        match self {
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Scale(_) => "scale",
            OpKind::MatMul => "matmul",
            OpKind::BiasAdd => "bias_add",
            OpKind::Relu => "relu",
            OpKind::Tanh => "tanh",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Softmax => "softmax",
            OpKind::Mean => "mean",
            OpKind::Sum => "sum",
            OpKind::WeightedSum => "weighted_sum",
            OpKind::CrossEntropy(_) => "cross_entropy",
            OpKind::Noise => "noise",
        }
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf { trainable: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MatMul(Var, Var),
    BiasAdd(Var, Var),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Softmax(Var),
    Mean(Var),
    Sum(Var),
    WeightedSum { weights: Var, inputs: Vec<Var> },
    CrossEntropy { logits: Var, labels: Vec<usize>, probs: Tensor },
    Noise(Var),
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Tensor,
}

/// Gradients of a scalar root with respect to the trainable leaves.
#[derive(Clone, Debug, Default)]
pub struct GradMap {
    grads: HashMap<Var, Tensor>,
}

impl GradMap {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(&var)
    }

    /// Gradient of `var`, panicking if it was not a trainable leaf.
    pub fn wrt(&self, var: Var) -> &Tensor {
        self.grads
            .get(&var)
            .unwrap_or_else(|| panic!("no gradient recorded for {var:?}"))
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.remove(&var)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Var, &Tensor)> {
        self.grads.iter()
    }
}

/// Single-owner Wengert list. Parents always precede children, so reverse
/// index order is a valid topological order for the backward sweep.
#[derive(Debug)]
pub struct Tape {
    nodes: Vec<Node>,
    rng: ChaCha8Rng,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::with_noise_seed(0)
    }

    /// Tape whose `noise` op draws from a stream seeded with `seed`.
    pub fn with_noise_seed(seed: u64) -> Self {
        Self {
            nodes: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant input; receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf { trainable: false }, value)
    }

    /// Leaf whose gradient is reported by [`Tape::backward`].
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf { trainable: true }, value)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    fn mismatch(&self, kind: &OpKind, inputs: &[Var]) -> TensorError {
        TensorError::ShapeMismatch {
            op: kind.name(),
            shapes: inputs.iter().map(|&v| self.shape(v).to_vec()).collect(),
        }
    }

    fn arity(&self, kind: &OpKind, inputs: &[Var], n: usize) -> Result<(), TensorError> {
        if inputs.len() != n {
            return Err(TensorError::Arity {
                op: kind.name(),
                expected: n,
                got: inputs.len(),
            });
        }
        Ok(())
    }

    /// Records `kind` applied to `inputs` and returns the result handle.
    pub fn apply(&mut self, kind: OpKind, inputs: &[Var]) -> Result<Var, TensorError> {
        match &kind {
            OpKind::Add | OpKind::Sub | OpKind::Mul => {
                self.arity(&kind, inputs, 2)?;
                let (a, b) = (inputs[0], inputs[1]);
                if self.shape(a) != self.shape(b) {
                    return Err(self.mismatch(&kind, inputs));
                }
                let (x, y) = (self.value(a).data(), self.value(b).data());
                let data: Vec<f64> = match kind {
                    OpKind::Add => x.iter().zip(y).map(|(p, q)| p + q).collect(),
                    OpKind::Sub => x.iter().zip(y).map(|(p, q)| p - q).collect(),
                    _ => x.iter().zip(y).map(|(p, q)| p * q).collect(),
                };
                let value = Tensor::new(self.shape(a).to_vec(), data)?;
                let op = match kind {
                    OpKind::Add => Op::Add(a, b),
                    OpKind::Sub => Op::Sub(a, b),
                    _ => Op::Mul(a, b),
                };
                Ok(self.push(op, value))
            }
            OpKind::Scale(c) => {
                self.arity(&kind, inputs, 1)?;
                let c = *c;
                let value = self.value(inputs[0]).map(|v| c * v);
                Ok(self.push(Op::Scale(inputs[0], c), value))
            }
            OpKind::MatMul => {
                self.arity(&kind, inputs, 2)?;
                let (a, b) = (inputs[0], inputs[1]);
                let (sa, sb) = (self.shape(a), self.shape(b));
                if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
                    return Err(self.mismatch(&kind, inputs));
                }
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let out = matmul(self.value(a).data(), self.value(b).data(), m, k, n);
                let value = Tensor::new(vec![m, n], out)?;
                Ok(self.push(Op::MatMul(a, b), value))
            }
            OpKind::BiasAdd => {
                self.arity(&kind, inputs, 2)?;
                let (x, b) = (inputs[0], inputs[1]);
                let (sx, sb) = (self.shape(x), self.shape(b));
                if sx.len() != 2 || sb.len() != 1 || sx[1] != sb[0] {
                    return Err(self.mismatch(&kind, inputs));
                }
                let n = sb[0];
                let bias = self.value(b).data();
                let mut value = self.value(x).clone();
                for row in value.data_mut().chunks_mut(n) {
                    for (v, bj) in row.iter_mut().zip(bias) {
                        *v += bj;
                    }
                }
                Ok(self.push(Op::BiasAdd(x, b), value))
            }
            OpKind::Relu => {
                self.arity(&kind, inputs, 1)?;
                let value = self.value(inputs[0]).map(|v| v.max(0.0));
                Ok(self.push(Op::Relu(inputs[0]), value))
            }
            OpKind::Tanh => {
                self.arity(&kind, inputs, 1)?;
                let value = self.value(inputs[0]).map(f64::tanh);
                Ok(self.push(Op::Tanh(inputs[0]), value))
            }
            OpKind::Sigmoid => {
                self.arity(&kind, inputs, 1)?;
                let value = self.value(inputs[0]).map(sigmoid);
                Ok(self.push(Op::Sigmoid(inputs[0]), value))
            }
            OpKind::Softmax => {
                self.arity(&kind, inputs, 1)?;
                let x = self.value(inputs[0]);
                if x.shape().is_empty() {
                    return Err(self.mismatch(&kind, inputs));
                }
                let n = x.cols();
                let mut value = x.clone();
                for row in value.data_mut().chunks_mut(n) {
                    softmax_in_place(row);
                }
                Ok(self.push(Op::Softmax(inputs[0]), value))
            }
            OpKind::Mean | OpKind::Sum => {
                self.arity(&kind, inputs, 1)?;
                let x = self.value(inputs[0]);
                if x.is_empty() {
                    return Err(self.mismatch(&kind, inputs));
                }
                let total: f64 = x.data().iter().sum();
                if matches!(kind, OpKind::Mean) {
                    let value = Tensor::scalar(total / x.len() as f64);
                    Ok(self.push(Op::Mean(inputs[0]), value))
                } else {
                    Ok(self.push(Op::Sum(inputs[0]), Tensor::scalar(total)))
                }
            }
            OpKind::WeightedSum => {
                let Some((&weights, rest)) = inputs.split_first() else {
                    return Err(self.mismatch(&kind, inputs));
                };
                let ws = self.shape(weights);
                if ws.len() != 1 || ws[0] != rest.len() || rest.is_empty() {
                    return Err(self.mismatch(&kind, inputs));
                }
                let shape = self.shape(rest[0]).to_vec();
                if rest.iter().any(|&v| self.shape(v) != shape.as_slice()) {
                    return Err(self.mismatch(&kind, inputs));
                }
                let mut value = Tensor::zeros(&shape);
                let w = self.value(weights).data().to_vec();
                for (&wk, &xk) in w.iter().zip(rest) {
                    value.add_scaled(self.value(xk), wk);
                }
                let op = Op::WeightedSum {
                    weights,
                    inputs: rest.to_vec(),
                };
                Ok(self.push(op, value))
            }
            OpKind::CrossEntropy(labels) => {
                self.arity(&kind, inputs, 1)?;
                let logits = inputs[0];
                let s = self.shape(logits);
                if s.len() != 2 || s[0] != labels.len() || s[0] == 0 {
                    return Err(self.mismatch(&kind, inputs));
                }
                let classes = s[1];
                if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
                    return Err(TensorError::LabelOutOfRange {
                        label: bad,
                        classes,
                    });
                }
                let mut probs = self.value(logits).clone();
                let mut total = 0.0;
                for (row, &label) in probs.data_mut().chunks_mut(classes).zip(labels) {
                    // log-sum-exp before the in-place softmax overwrites the row
                    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                    total += lse - row[label];
                    softmax_in_place(row);
                }
                let value = Tensor::scalar(total / labels.len() as f64);
                let op = Op::CrossEntropy {
                    logits,
                    labels: labels.clone(),
                    probs,
                };
                Ok(self.push(op, value))
            }
            OpKind::Noise => {
                self.arity(&kind, inputs, 1)?;
                let shape = self.shape(inputs[0]).to_vec();
                let n: usize = shape.iter().product();
                let data: Vec<f64> = (0..n)
                    .map(|_| StandardNormal.sample(&mut self.rng))
                    .collect();
                let value = Tensor::new(shape, data)?;
                Ok(self.push(Op::Noise(inputs[0]), value))
            }
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.apply(OpKind::Add, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.apply(OpKind::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.apply(OpKind::Mul, &[a, b])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var, TensorError> {
        self.apply(OpKind::Scale(c), &[a])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.apply(OpKind::MatMul, &[a, b])
    }

    pub fn bias_add(&mut self, x: Var, b: Var) -> Result<Var, TensorError> {
        self.apply(OpKind::BiasAdd, &[x, b])
    }

    /// `x @ w + b`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var, TensorError> {
        let xw = self.matmul(x, w)?;
        self.bias_add(xw, b)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, TensorError> {
        self.apply(OpKind::Relu, &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, TensorError> {
        self.apply(OpKind::Tanh, &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, TensorError> {
        self.apply(OpKind::Sigmoid, &[a])
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var, TensorError> {
        self.apply(OpKind::Softmax, &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, TensorError> {
        self.apply(OpKind::Mean, &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, TensorError> {
        self.apply(OpKind::Sum, &[a])
    }

    pub fn weighted_sum(&mut self, weights: Var, inputs: &[Var]) -> Result<Var, TensorError> {
        let mut all = Vec::with_capacity(inputs.len() + 1);
        all.push(weights);
        all.extend_from_slice(inputs);
        self.apply(OpKind::WeightedSum, &all)
    }

    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var, TensorError> {
        self.apply(OpKind::CrossEntropy(labels.to_vec()), &[logits])
    }

    pub fn noise(&mut self, a: Var) -> Result<Var, TensorError> {
        self.apply(OpKind::Noise, &[a])
    }

    /// Reverse sweep from the scalar `root`.
    pub fn backward(&self, root: Var) -> Result<GradMap, TensorError> {
        let root_value = &self.nodes[root.0].value;
        if !root_value.is_scalar() {
            return Err(TensorError::NonScalarRoot {
                shape: root_value.shape().to_vec(),
            });
        }
        let mut adjoints: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        adjoints[root.0] = Some(Tensor::filled(root_value.shape(), 1.0));
        let mut grads = GradMap::default();

        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if let Op::Leaf { trainable } = node.op {
                if trainable {
                    let g = adjoints[idx]
                        .take()
                        .unwrap_or_else(|| Tensor::zeros(node.value.shape()));
                    grads.grads.insert(Var(idx), g);
                }
                continue;
            }
            let Some(upstream) = adjoints[idx].take() else {
                continue;
            };
            self.propagate(node, &upstream, &mut adjoints);
        }
        Ok(grads)
    }

    fn propagate(&self, node: &Node, up: &Tensor, adj: &mut [Option<Tensor>]) {
        let mut accumulate = |var: Var, g: Tensor| match &mut adj[var.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        };
        match &node.op {
            Op::Leaf { .. } => {}
            Op::Add(a, b) => {
                accumulate(*a, up.clone());
                accumulate(*b, up.clone());
            }
            Op::Sub(a, b) => {
                accumulate(*a, up.clone());
                accumulate(*b, up.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let ga = zip_map(up, vb, |g, y| g * y);
                let gb = zip_map(up, va, |g, x| g * x);
                accumulate(*a, ga);
                accumulate(*b, gb);
            }
            Op::Scale(a, c) => accumulate(*a, up.map(|v| c * v)),
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
                // dA = G B^T, dB = A^T G
                let mut ga = vec![0.0; m * k];
                for i in 0..m {
                    let grow = &up.data()[i * n..(i + 1) * n];
                    for p in 0..k {
                        let brow = &vb.data()[p * n..(p + 1) * n];
                        ga[i * k + p] = grow.iter().zip(brow).map(|(g, b)| g * b).sum();
                    }
                }
                let mut gb = vec![0.0; k * n];
                for i in 0..m {
                    let grow = &up.data()[i * n..(i + 1) * n];
                    for p in 0..k {
                        let aip = va.data()[i * k + p];
                        if aip == 0.0 {
                            continue;
                        }
                        let out = &mut gb[p * n..(p + 1) * n];
                        for (o, g) in out.iter_mut().zip(grow) {
                            *o += aip * g;
                        }
                    }
                }
                accumulate(*a, Tensor::new(vec![m, k], ga).expect("shape"));
                accumulate(*b, Tensor::new(vec![k, n], gb).expect("shape"));
            }
            Op::BiasAdd(x, b) => {
                let n = self.value(*b).len();
                let mut gb = vec![0.0; n];
                for row in up.data().chunks(n) {
                    for (o, g) in gb.iter_mut().zip(row) {
                        *o += g;
                    }
                }
                accumulate(*x, up.clone());
                accumulate(*b, Tensor::vector(gb));
            }
            Op::Relu(a) => {
                let g = zip_map(up, self.value(*a), |g, x| if x > 0.0 { g } else { 0.0 });
                accumulate(*a, g);
            }
            Op::Tanh(a) => {
                let g = zip_map(up, &node.value, |g, y| g * (1.0 - y * y));
                accumulate(*a, g);
            }
            Op::Sigmoid(a) => {
                let g = zip_map(up, &node.value, |g, y| g * y * (1.0 - y));
                accumulate(*a, g);
            }
            Op::Softmax(a) => {
                let n = node.value.cols();
                let mut g = up.clone();
                for (grow, yrow) in g.data_mut().chunks_mut(n).zip(node.value.data().chunks(n)) {
                    let dot: f64 = grow.iter().zip(yrow).map(|(g, y)| g * y).sum();
                    for (gi, yi) in grow.iter_mut().zip(yrow) {
                        *gi = yi * (*gi - dot);
                    }
                }
                accumulate(*a, g);
            }
            Op::Mean(a) => {
                let x = self.value(*a);
                accumulate(*a, Tensor::filled(x.shape(), up.item() / x.len() as f64));
            }
            Op::Sum(a) => {
                let x = self.value(*a);
                accumulate(*a, Tensor::filled(x.shape(), up.item()));
            }
            Op::WeightedSum { weights, inputs } => {
                let w = self.value(*weights).data();
                let gw: Vec<f64> = inputs
                    .iter()
                    .map(|&x| dot(up.data(), self.value(x).data()))
                    .collect();
                for (&x, &wk) in inputs.iter().zip(w) {
                    accumulate(x, up.map(|g| wk * g));
                }
                accumulate(*weights, Tensor::vector(gw));
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let classes = probs.cols();
                let scale = up.item() / labels.len() as f64;
                let mut g = probs.clone();
                for (row, &label) in g.data_mut().chunks_mut(classes).zip(labels) {
                    row[label] -= 1.0;
                    for v in row.iter_mut() {
                        *v *= scale;
                    }
                }
                accumulate(*logits, g);
            }
            Op::Noise(a) => {
                accumulate(*a, Tensor::zeros(self.value(*a).shape()));
            }
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable softmax of one row.
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            for (o, bj) in orow.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += aip * bj;
            }
        }
    }
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("same shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![0.0; 3]));
        let y = tape.softmax(x).unwrap();
        for &v in tape.value(y).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn relu_clamps_negatives() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![-1.0, 2.0]));
        let y = tape.relu(x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 2.0]);
    }

    #[test]
    fn cross_entropy_of_uniform_logits_is_ln2() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap());
        let l = tape.cross_entropy(x, &[0]).unwrap();
        assert!((tape.value(l).item() - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn square_has_derivative_six_at_three() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::scalar(3.0));
        let y = tape.mul(x, x).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.wrt(x).item(), 6.0);
    }

    #[test]
    fn softmax_dot_constant_gradient() {
        // d/dz [softmax(z) . (1, 0)] at z = 0 is p0 (e0 - p) = (0.25, -0.25)
        let mut tape = Tape::new();
        let z = tape.param(Tensor::vector(vec![0.0, 0.0]));
        let c = tape.constant(Tensor::vector(vec![1.0, 0.0]));
        let p = tape.softmax(z).unwrap();
        let pc = tape.mul(p, c).unwrap();
        let s = tape.sum(pc).unwrap();
        let g = tape.backward(s).unwrap();
        let gz = g.wrt(z).data();
        assert!((gz[0] - 0.25).abs() < 1e-15);
        assert!((gz[1] + 0.25).abs() < 1e-15);
    }

    #[test]
    fn sum_of_leaves_has_unit_gradients() {
        let mut tape = Tape::new();
        let leaves: Vec<Var> = (0..4)
            .map(|i| tape.param(Tensor::vector(vec![i as f64, -1.0, 0.5])))
            .collect();
        let mut acc = leaves[0];
        for &l in &leaves[1..] {
            acc = tape.add(acc, l).unwrap();
        }
        let s = tape.sum(acc).unwrap();
        let g = tape.backward(s).unwrap();
        for l in leaves {
            assert!(g.wrt(l).data().iter().all(|&v| v == 1.0));
        }
    }

    #[test]
    fn non_scalar_root_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::vector(vec![1.0, 2.0]));
        let y = tape.relu(x).unwrap();
        assert!(matches!(
            tape.backward(y),
            Err(TensorError::NonScalarRoot { .. })
        ));
    }

    #[test]
    fn shape_mismatch_names_the_op() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        let err = tape.matmul(a, b).unwrap_err();
        match err {
            TensorError::ShapeMismatch { op, shapes } => {
                assert_eq!(op, "matmul");
                assert_eq!(shapes, vec![vec![2, 3], vec![2, 3]]);
            }
            other => panic!("unexpected {other:?}"),
        }
        let c = tape.constant(Tensor::zeros(&[3]));
        assert!(tape.add(a, c).is_err());
    }

    #[test]
    fn noise_is_replayable_and_blocks_gradient() {
        let run = |seed| {
            let mut tape = Tape::with_noise_seed(seed);
            let x = tape.param(Tensor::zeros(&[2, 3]));
            let n = tape.noise(x).unwrap();
            let s = tape.sum(n).unwrap();
            let g = tape.backward(s).unwrap();
            assert!(g.wrt(x).data().iter().all(|&v| v == 0.0));
            tape.value(n).clone()
        };
        assert_eq!(run(7), run(7));
        assert_ne!(run(7), run(8));
        assert!(run(7).all_finite());
    }

    #[test]
    fn unused_trainable_leaf_gets_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::scalar(2.0));
        let unused = tape.param(Tensor::vector(vec![1.0, 1.0]));
        let y = tape.scale(x, 3.0).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.wrt(x).item(), 3.0);
        assert_eq!(g.wrt(unused).data(), &[0.0, 0.0]);
    }
}
