//! Cell search space, the softmax-mixed supernetwork and its discretization.

mod discrete;
mod metrics;
mod network;
mod space;

pub use discrete::{instantiate_discrete, DiscreteEval, DiscreteNet};
pub use metrics::{cell_width_depth, param_free_proportion, CellTopology, WidthDepth};
pub use network::{
    accuracy, argmax, discretize, mixture_weights, softmax_weights, Evaluation, GradRequest,
    Mixing, Samples, Supernet, SupernetState, TENSORS_PER_OP,
};
pub use space::{ArchWeights, CellSpace, DiscreteArch, OpKind};

use thiserror::Error;

use crate::autodiff::TensorError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SupernetError {
    #[error("invalid cell space: {0}")]
    InvalidSpace(String),
    #[error("{what}: expected length {expected}, got {got}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("op index {index} out of range for a corpus of {corpus}")]
    OpIndex { index: usize, corpus: usize },
    #[error("unknown operation `{0}`")]
    UnknownOp(String),
    #[error("edge ({0}, {1}) is not part of the cell")]
    UnknownEdge(usize, usize),
    #[error("bad architecture encoding `{0}`")]
    BadEncoding(String),
    #[error("batch features {features:?} do not match {labels} labels or the input width")]
    BatchShape { features: Vec<usize>, labels: usize },
    #[error("loss is not finite (first bad value at node {node})")]
    NonFiniteLoss { node: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy_samples(n: usize, d: usize, seed: u64) -> Samples {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let labels = (0..n).map(|i| i % 2).collect();
        Samples::new(Tensor::matrix(n, d, data).unwrap(), labels).unwrap()
    }

    #[test]
    fn mixture_weight_examples() {
        let w = mixture_weights(&[0.0, 0.0, 0.0], None).unwrap();
        assert!(w.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
        let w = mixture_weights(&[0.0, 0.0, 0.0], Some(&[0.1, -0.1, 0.0])).unwrap();
        let expected = [0.1 + 1.0 / 3.0, 1.0 / 3.0 - 0.1, 1.0 / 3.0];
        for (a, b) in w.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
        let w = mixture_weights(&[2f64.ln(), 0.0], None).unwrap();
        assert!((w[0] - 2.0 / 3.0).abs() < 1e-15 && (w[1] - 1.0 / 3.0).abs() < 1e-15);
        assert!(mixture_weights(&[0.0, 0.0], Some(&[0.0])).is_err());
    }

    #[test]
    fn discretize_examples() {
        let a = ArchWeights::from_edges(vec![vec![0.2, 0.5, 0.3], vec![1.0, 1.0, 0.0]]).unwrap();
        assert_eq!(discretize(&a).ops(), &[1, 0]);
    }

    #[test]
    fn skip_only_cell_is_stem_plus_head() {
        let space = CellSpace::new(1, vec![(0, 2)], vec![OpKind::Skip, OpKind::Zero], 3).unwrap();
        let net = Supernet::new(space.clone(), 2, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let state = net.init_state(&mut rng);
        let x = toy_samples(5, 2, 2);
        let eval = net
            .forward(&state, Mixing::Weights(&[1.0, 0.0]), &x, 0)
            .unwrap();

        // stem0 then head, by hand
        let t = &state.tensors;
        let mut expected = Vec::new();
        for row in x.features.data().chunks(2) {
            let h: Vec<f64> = (0..3)
                .map(|j| row[0] * t[0].data()[j] + row[1] * t[0].data()[3 + j] + t[1].data()[j])
                .collect();
            for c in 0..2 {
                let z: f64 = (0..3).map(|j| h[j] * t[4].data()[j * 2 + c]).sum::<f64>() + t[5].data()[c];
                expected.push(z);
            }
        }
        for (a, b) in eval.logits.data().iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_mixture_gives_head_bias() {
        let space = CellSpace::dense(2, OpKind::ALL.to_vec(), 4).unwrap();
        let net = Supernet::new(space.clone(), 3, 3).unwrap();
        let state = net.init_state(&mut ChaCha8Rng::seed_from_u64(3));
        let zeros = vec![0.0; space.arch_dim()];
        let x = toy_samples(4, 3, 5);
        let eval = net.forward(&state, Mixing::Weights(&zeros), &x, 9).unwrap();
        let bias = state.tensors[5].data();
        for row in eval.logits.data().chunks(3) {
            assert_eq!(row, bias);
        }
    }

    #[test]
    fn two_edge_scalar_cell_by_hand() {
        // width 1: node2 = w_a * relu(a*h0 + b) + w_b * h1 ; output = node2
        let space = CellSpace::new(
            1,
            vec![(0, 2), (1, 2)],
            vec![OpKind::LinearRelu, OpKind::Skip],
            1,
        )
        .unwrap();
        let net = Supernet::new(space, 1, 2).unwrap();
        let s = |v: f64| Tensor::vector(vec![v]);
        let m = |v: f64| Tensor::matrix(1, 1, vec![v]).unwrap();
        let m2 = |a: f64, b: f64| Tensor::matrix(1, 2, vec![a, b]).unwrap();
        let state = SupernetState::new(vec![
            m(2.0),
            s(0.5),
            m(-1.0),
            s(0.25),
            m2(1.0, -1.0),
            Tensor::vector(vec![0.0, 0.1]),
            // edge 0 linear_relu
            m(1.5),
            s(-0.5),
            // edge 1 linear_relu
            m(3.0),
            s(0.0),
        ]);
        let weights = [0.7, 0.3, 0.2, 0.8];
        let x = Samples::new(Tensor::matrix(1, 1, vec![0.4]).unwrap(), vec![1]).unwrap();
        let eval = net.forward(&state, Mixing::Weights(&weights), &x, 0).unwrap();

        let h0: f64 = 2.0 * 0.4 + 0.5;
        let h1: f64 = -1.0 * 0.4 + 0.25;
        let e0 = 0.7 * (1.5 * h0 - 0.5).max(0.0) + 0.3 * h0;
        let e1 = 0.2 * (3.0 * h1).max(0.0) + 0.8 * h1;
        let node = e0 + e1;
        let z0 = node;
        let z1 = -node + 0.1;
        let lse = (z0.exp() + z1.exp()).ln();
        let loss = lse - z1;
        assert!((eval.loss - loss).abs() < 1e-14, "{} vs {}", eval.loss, loss);
    }

    #[test]
    fn one_hot_limit_matches_discrete_network() {
        let corpus = vec![
            OpKind::Skip,
            OpKind::Zero,
            OpKind::LinearRelu,
            OpKind::LinearTanh,
            OpKind::LinearSigmoid,
        ];
        let space = CellSpace::dense(2, corpus, 4).unwrap();
        let net = Supernet::new(space.clone(), 2, 2).unwrap();
        let state = net.init_state(&mut ChaCha8Rng::seed_from_u64(11));
        let x = toy_samples(16, 2, 4);
        let arch = DiscreteArch::new(&space, vec![2, 0, 4, 1, 3]).unwrap();
        let mut alpha = ArchWeights::zeros(&space);
        for (e, &o) in arch.ops().iter().enumerate() {
            alpha.edge_mut(e)[o] = 40.0;
        }
        let mixed = net
            .forward(&state, Mixing::Alpha { alpha: &alpha, delta: None }, &x, 0)
            .unwrap();
        let discrete = DiscreteNet::with_state(&net, &arch, state).unwrap();
        let single = discrete.evaluate(&x, 0, false).unwrap();
        for (a, b) in mixed.logits.data().iter().zip(single.logits.data()) {
            assert!((a - b).abs() <= 1e-9);
        }
        assert!((mixed.loss - single.loss).abs() <= 1e-9);
    }

    #[test]
    fn param_count_only_counts_chosen_ops() {
        let space = CellSpace::new(
            1,
            vec![(0, 2), (1, 2)],
            vec![OpKind::Skip, OpKind::LinearRelu],
            3,
        )
        .unwrap();
        let net = Supernet::new(space.clone(), 2, 2).unwrap();
        let stems_head = 2 * (2 * 3 + 3) + 3 * 2 + 2;
        let skip = instantiate_discrete(&net, &DiscreteArch::new(&space, vec![0, 0]).unwrap(), 1).unwrap();
        assert_eq!(skip.param_count(), stems_head);
        let one = instantiate_discrete(&net, &DiscreteArch::new(&space, vec![1, 0]).unwrap(), 1).unwrap();
        assert_eq!(one.param_count(), stems_head + 12);
        assert_eq!(net.num_cell_tensors(), 2 * 1 * TENSORS_PER_OP);
    }

    #[test]
    fn alpha_gradient_matches_finite_differences() {
        let space = CellSpace::dense(2, OpKind::ALL.to_vec(), 3).unwrap();
        let net = Supernet::new(space.clone(), 2, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let state = net.init_state(&mut rng);
        let alpha = ArchWeights::init(&space, &mut rng);
        let x = toy_samples(12, 2, 8);
        let eval = net
            .evaluate(&state, Mixing::Alpha { alpha: &alpha, delta: None }, &x, 5, GradRequest::ARCH)
            .unwrap();
        let g = eval.arch_grad.unwrap();
        let h = 1e-5;
        for i in 0..space.arch_dim() {
            let mut up = alpha.clone();
            up.as_mut_slice()[i] += h;
            let mut dn = alpha.clone();
            dn.as_mut_slice()[i] -= h;
            let f = |a: &ArchWeights| {
                net.forward(&state, Mixing::Alpha { alpha: a, delta: None }, &x, 5)
                    .unwrap()
                    .loss
            };
            let fd = (f(&up) - f(&dn)) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-7 * (1.0 + fd.abs()), "coord {i}: {fd} vs {}", g[i]);
        }
    }
}
