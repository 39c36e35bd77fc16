use rand::Rng;
use serde::{Deserialize, Serialize};

use super::space::{ArchWeights, CellSpace, DiscreteArch, OpKind};
use super::SupernetError;
use crate::autodiff::{softmax_in_place, Tape, Tensor, Var};

/// Feature matrix `[n, in_features]` with integer class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Samples {
    pub features: Tensor,
    pub labels: Vec<usize>,
}

impl Samples {
    pub fn new(features: Tensor, labels: Vec<usize>) -> Result<Self, SupernetError> {
        if features.shape().len() != 2 || features.rows() != labels.len() {
            return Err(SupernetError::BatchShape {
                features: features.shape().to_vec(),
                labels: labels.len(),
            });
        }
        Ok(Self { features, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_features(&self) -> usize {
        self.features.cols()
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Samples {
        let d = self.num_features();
        let mut data = Vec::with_capacity(indices.len() * d);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(&self.features.data()[i * d..(i + 1) * d]);
            labels.push(self.labels[i]);
        }
        Samples {
            features: Tensor::new(vec![indices.len(), d], data).expect("row slice"),
            labels,
        }
    }

    pub fn head(&self, n: usize) -> Samples {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.select(&idx)
    }
}

/// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` affine initialization.
pub(crate) fn init_affine<R: Rng + ?Sized>(
    rng: &mut R,
    fan_in: usize,
    fan_out: usize,
) -> (Tensor, Tensor) {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let w = (0..fan_in * fan_out)
        .map(|_| rng.random_range(-bound..=bound))
        .collect();
    let b = (0..fan_out).map(|_| rng.random_range(-bound..=bound)).collect();
    (
        Tensor::new(vec![fan_in, fan_out], w).expect("affine weight"),
        Tensor::vector(b),
    )
}

/// Trainable tensors of a mixture network, flattened in a fixed order:
/// two input stems (`weight, bias` each), the classifier head, then
/// `(weight, bias)` for every parametric op of every edge (edge-major,
/// corpus order).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupernetState {
    pub tensors: Vec<Tensor>,
}

pub(crate) const STEM_AND_HEAD: usize = 6;
pub const TENSORS_PER_OP: usize = 2;

impl SupernetState {
    pub fn new(tensors: Vec<Tensor>) -> Self {
        Self { tensors }
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::all_finite)
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }
}

/// How per-edge mixture weights are formed for one evaluation.
#[derive(Clone, Copy, Debug)]
pub enum Mixing<'a> {
    /// `softmax(alpha_e) + delta_e` per edge. `delta` is flattened edge-major.
    Alpha {
        alpha: &'a ArchWeights,
        delta: Option<&'a [f64]>,
    },
    /// Mixture weights supplied directly, flattened edge-major.
    Weights(&'a [f64]),
}

/// Which gradients [`Supernet::evaluate`] should return.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct GradRequest {
    /// Gradient w.r.t. alpha (for [`Mixing::Alpha`]) or the supplied mixture weights.
    pub arch: bool,
    /// Gradient w.r.t. the post-softmax perturbation slot.
    pub delta: bool,
    pub weights: bool,
}

impl GradRequest {
    pub const NONE: GradRequest = GradRequest {
        arch: false,
        delta: false,
        weights: false,
    };
    pub const ARCH: GradRequest = GradRequest {
        arch: true,
        delta: false,
        weights: false,
    };
    pub const DELTA: GradRequest = GradRequest {
        arch: false,
        delta: true,
        weights: false,
    };
    pub const WEIGHTS: GradRequest = GradRequest {
        arch: false,
        delta: false,
        weights: true,
    };
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub logits: Tensor,
    pub loss: f64,
    pub arch_grad: Option<Vec<f64>>,
    pub delta_grad: Option<Vec<f64>>,
    pub weight_grads: Option<Vec<Tensor>>,
}

impl Evaluation {
    pub fn accuracy(&self, labels: &[usize]) -> f64 {
        accuracy(&self.logits, labels)
    }
}

/// Fraction of rows whose arg-max logit equals the label.
pub fn accuracy(logits: &Tensor, labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let c = logits.cols();
    let correct = logits
        .data()
        .chunks(c)
        .zip(labels)
        .filter(|(row, &l)| argmax(row) == l)
        .count();
    correct as f64 / labels.len() as f64
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// `softmax(alpha_edge) + delta_edge`, without renormalization.
pub fn mixture_weights(alpha_edge: &[f64], delta_edge: Option<&[f64]>) -> Result<Vec<f64>, SupernetError> {
    let mut w = alpha_edge.to_vec();
    if w.is_empty() {
        return Err(SupernetError::LengthMismatch {
            what: "alpha edge",
            expected: 1,
            got: 0,
        });
    }
    softmax_in_place(&mut w);
    if let Some(d) = delta_edge {
        if d.len() != w.len() {
            return Err(SupernetError::LengthMismatch {
                what: "perturbation edge",
                expected: w.len(),
                got: d.len(),
            });
        }
        for (wi, di) in w.iter_mut().zip(d) {
            *wi += di;
        }
    }
    Ok(w)
}

/// Flattened softmax of every edge.
pub fn softmax_weights(alpha: &ArchWeights) -> Vec<f64> {
    let mut out = alpha.as_slice().to_vec();
    for chunk in out.chunks_mut(alpha.num_ops()) {
        softmax_in_place(chunk);
    }
    out
}

/// Per-edge arg-max of the architecture weights, lowest index on ties.
pub fn discretize(alpha: &ArchWeights) -> DiscreteArch {
    let ops = (0..alpha.num_edges())
        .map(|e| argmax(alpha.edge(e)))
        .collect();
    DiscreteArch::from_ops_unchecked(ops)
}

/// The softmax-mixed supernetwork over a [`CellSpace`].
#[derive(Clone, Debug, PartialEq)]
pub struct Supernet {
    space: CellSpace,
    in_features: usize,
    num_classes: usize,
    /// `op_slot[e][k]`: tensor index of edge `e`, op `k` weight, if parametric.
    op_slot: Vec<Vec<Option<usize>>>,
}

impl Supernet {
    pub fn new(space: CellSpace, in_features: usize, num_classes: usize) -> Result<Self, SupernetError> {
        space.validate()?;
        if in_features == 0 || num_classes < 2 {
            return Err(SupernetError::InvalidSpace(format!(
                "need in_features > 0 and at least 2 classes, got {in_features} / {num_classes}"
            )));
        }
        let mut next = STEM_AND_HEAD;
        let op_slot = (0..space.num_edges())
            .map(|_| {
                space
                    .corpus
                    .iter()
                    .map(|op| {
                        if op.is_parameter_free() {
                            None
                        } else {
                            let slot = next;
                            next += TENSORS_PER_OP;
                            Some(slot)
                        }
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            space,
            in_features,
            num_classes,
            op_slot,
        })
    }

    pub fn space(&self) -> &CellSpace {
        &self.space
    }

    pub fn in_features(&self) -> usize {
        self.in_features
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Tensors owned by cell ops (stems and head excluded).
    pub fn num_cell_tensors(&self) -> usize {
        self.space.num_edges() * self.space.parametric_ops().len() * TENSORS_PER_OP
    }

    pub fn num_tensors(&self) -> usize {
        STEM_AND_HEAD + self.num_cell_tensors()
    }

    pub(crate) fn op_slot(&self, edge: usize, op: usize) -> Option<usize> {
        self.op_slot[edge][op]
    }

    pub fn init_state<R: Rng + ?Sized>(&self, rng: &mut R) -> SupernetState {
        let width = self.space.feature_width;
        let mut out = Vec::with_capacity(self.num_tensors());
        for _ in 0..2 {
            let (w, b) = init_affine(rng, self.in_features, width);
            out.push(w);
            out.push(b);
        }
        let (w, b) = init_affine(rng, width, self.num_classes);
        out.push(w);
        out.push(b);
        for _ in 0..self.num_cell_tensors() / TENSORS_PER_OP {
            let (w, b) = init_affine(rng, width, width);
            out.push(w);
            out.push(b);
        }
        SupernetState::new(out)
    }

    pub fn check_state(&self, state: &SupernetState) -> Result<(), SupernetError> {
        if state.len() != self.num_tensors() {
            return Err(SupernetError::LengthMismatch {
                what: "supernet tensors",
                expected: self.num_tensors(),
                got: state.len(),
            });
        }
        Ok(())
    }

    /// Loss and logits without gradients.
    pub fn forward(
        &self,
        state: &SupernetState,
        mixing: Mixing<'_>,
        samples: &Samples,
        noise_seed: u64,
    ) -> Result<Evaluation, SupernetError> {
        self.evaluate(state, mixing, samples, noise_seed, GradRequest::NONE)
    }

    /// Records the mixture network on a fresh tape and differentiates the loss.
    pub fn evaluate(
        &self,
        state: &SupernetState,
        mixing: Mixing<'_>,
        samples: &Samples,
        noise_seed: u64,
        request: GradRequest,
    ) -> Result<Evaluation, SupernetError> {
        self.check_state(state)?;
        if samples.num_features() != self.in_features {
            return Err(SupernetError::BatchShape {
                features: samples.features.shape().to_vec(),
                labels: samples.len(),
            });
        }
        let k = self.space.num_ops();
        let e_count = self.space.num_edges();
        let mut tape = Tape::with_noise_seed(noise_seed);

        let params: Vec<Var> = state
            .tensors
            .iter()
            .map(|t| {
                if request.weights {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect();

        let mut arch_leaves = Vec::new();
        let mut delta_leaves = Vec::new();
        let mut mixtures = Vec::with_capacity(e_count);
        match mixing {
            Mixing::Alpha { alpha, delta } => {
                if !alpha.matches(&self.space) {
                    return Err(SupernetError::LengthMismatch {
                        what: "architecture weights",
                        expected: self.space.arch_dim(),
                        got: alpha.as_slice().len(),
                    });
                }
                if let Some(d) = delta {
                    if d.len() != self.space.arch_dim() {
                        return Err(SupernetError::LengthMismatch {
                            what: "perturbation",
                            expected: self.space.arch_dim(),
                            got: d.len(),
                        });
                    }
                }
                for e in 0..e_count {
                    let a = Tensor::vector(alpha.edge(e).to_vec());
                    let a = if request.arch {
                        let v = tape.param(a);
                        arch_leaves.push(v);
                        v
                    } else {
                        tape.constant(a)
                    };
                    let mut m = tape.softmax(a)?;
                    if let Some(d) = delta {
                        let dv = Tensor::vector(d[e * k..(e + 1) * k].to_vec());
                        let dv = if request.delta {
                            let v = tape.param(dv);
                            delta_leaves.push(v);
                            v
                        } else {
                            tape.constant(dv)
                        };
                        m = tape.add(m, dv)?;
                    }
                    mixtures.push(m);
                }
            }
            Mixing::Weights(w) => {
                if w.len() != self.space.arch_dim() {
                    return Err(SupernetError::LengthMismatch {
                        what: "mixture weights",
                        expected: self.space.arch_dim(),
                        got: w.len(),
                    });
                }
                for e in 0..e_count {
                    let t = Tensor::vector(w[e * k..(e + 1) * k].to_vec());
                    let v = if request.arch {
                        let v = tape.param(t);
                        arch_leaves.push(v);
                        v
                    } else {
                        tape.constant(t)
                    };
                    mixtures.push(v);
                }
            }
        }

        let x = tape.constant(samples.features.clone());
        let logits = self.record_cell(&mut tape, &params, x, |tape, e, outs| {
            tape.weighted_sum(mixtures[e], outs)
        }, None)?;
        let loss = tape.cross_entropy(logits.0, &samples.labels)?;
        let loss_value = tape.value(loss).item();
        if !loss_value.is_finite() {
            let node = logits.1.unwrap_or(self.space.output_node());
            return Err(SupernetError::NonFiniteLoss { node });
        }

        let needs_grad = request.arch || request.delta || request.weights;
        let mut grads = if needs_grad {
            Some(tape.backward(loss)?)
        } else {
            None
        };
        let flatten = |grads: &mut crate::autodiff::GradMap, leaves: &[Var]| -> Vec<f64> {
            leaves
                .iter()
                .flat_map(|&v| grads.take(v).expect("leaf gradient").into_data())
                .collect()
        };
        let arch_grad = match (&mut grads, request.arch) {
            (Some(g), true) => Some(flatten(g, &arch_leaves)),
            _ => None,
        };
        let delta_grad = match (&mut grads, request.delta) {
            (Some(g), true) if !delta_leaves.is_empty() => Some(flatten(g, &delta_leaves)),
            (Some(_), true) => Some(vec![0.0; self.space.arch_dim()]),
            _ => None,
        };
        let weight_grads = match (&mut grads, request.weights) {
            (Some(g), true) => Some(
                params
                    .iter()
                    .map(|&v| g.take(v).expect("param gradient"))
                    .collect(),
            ),
            _ => None,
        };
        Ok(Evaluation {
            logits: tape.value(logits.0).clone(),
            loss: loss_value,
            arch_grad,
            delta_grad,
            weight_grads,
        })
    }

    /// Records stems, cell and head. `combine(tape, edge, op_outputs)` mixes
    /// the candidate outputs of one edge. When `chosen` is set, only that op
    /// per edge is evaluated and passed to `combine`.
    ///
    /// Returns the logits and the first intermediate node whose value is
    /// not finite, if any.
    pub(crate) fn record_cell<F>(
        &self,
        tape: &mut Tape,
        params: &[Var],
        x: Var,
        mut combine: F,
        chosen: Option<&DiscreteArch>,
    ) -> Result<(Var, Option<usize>), SupernetError>
    where
        F: FnMut(&mut Tape, usize, &[Var]) -> Result<Var, crate::autodiff::TensorError>,
    {
        let n_nodes = self.space.output_node();
        let mut nodes: Vec<Option<Var>> = vec![None; n_nodes];
        nodes[0] = Some(tape.affine(x, params[0], params[1])?);
        nodes[1] = Some(tape.affine(x, params[2], params[3])?);
        let mut bad_node = None;

        // edges are stored in arbitrary order; materialize nodes in id order
        for node in self.space.intermediate_nodes() {
            let mut acc: Option<Var> = None;
            for (e, &(from, to)) in self.space.edges.iter().enumerate() {
                if to != node {
                    continue;
                }
                let h = nodes[from].expect("earlier node");
                let mut outs = Vec::new();
                for (op_idx, &op) in self.space.corpus.iter().enumerate() {
                    if let Some(arch) = chosen {
                        if arch.op(e) != op_idx {
                            continue;
                        }
                    }
                    let out = match op {
                        OpKind::Skip => h,
                        OpKind::Zero => {
                            let shape = tape.value(h).shape().to_vec();
                            tape.constant(Tensor::zeros(&shape))
                        }
                        OpKind::Noise => tape.noise(h)?,
                        OpKind::LinearRelu | OpKind::LinearTanh | OpKind::LinearSigmoid => {
                            let slot = self.op_slot(e, op_idx).expect("parametric slot");
                            let z = tape.affine(h, params[slot], params[slot + 1])?;
                            match op {
                                OpKind::LinearRelu => tape.relu(z)?,
                                OpKind::LinearTanh => tape.tanh(z)?,
                                _ => tape.sigmoid(z)?,
                            }
                        }
                    };
                    outs.push(out);
                }
                let mixed = combine(tape, e, &outs)?;
                acc = Some(match acc {
                    None => mixed,
                    Some(prev) => tape.add(prev, mixed)?,
                });
            }
            let value = acc.expect("validated: every intermediate node has an edge");
            if bad_node.is_none() && !tape.value(value).all_finite() {
                bad_node = Some(node);
            }
            nodes[node] = Some(value);
        }

        let mut out = nodes[self.space.num_input_nodes].expect("intermediate");
        for node in self.space.intermediate_nodes().skip(1) {
            out = tape.add(out, nodes[node].expect("intermediate"))?;
        }
        let out = tape.scale(out, 1.0 / self.space.num_intermediate as f64)?;
        let logits = tape.affine(out, params[4], params[5])?;
        Ok((logits, bad_node))
    }
}
