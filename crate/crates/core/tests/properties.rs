use perturbnas::analysis::{grid_coordinate, hvp_fd, QuadraticObjective};
use perturbnas::autodiff::{Tape, Tensor};
use perturbnas::search::{
    epsilon_at, project_ball, sample_rs_delta, EpsilonSchedule, FinalRecord, Norm, Trajectory, TrajectoryRecord,
};
use perturbnas::supernet::{discretize, param_free_proportion, softmax_weights, ArchWeights, CellSpace, DiscreteArch, OpKind};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn space() -> CellSpace {
    CellSpace::new(3, vec![(0, 2), (1, 2), (2, 3), (3, 4), (0, 4)], OpKind::ALL.to_vec(), 4).unwrap()
}

fn finite() -> impl Strategy<Value = f64> {
    -1e3f64..1e3
}

proptest! {
    #[test]
    fn projection_respects_the_ball(mut v in prop::collection::vec(-10.0f64..10.0, 1..40), eps in 0.0f64..2.0, l2 in any::<bool>()) {
        let norm = if l2 { Norm::L2 } else { Norm::Linf };
        project_ball(&mut v, eps, norm);
        prop_assert!(norm.of(&v) <= eps + 1e-12);
        let once = v.clone();
        project_ball(&mut v, eps, norm);
        prop_assert_eq!(once, v);
    }

    #[test]
    fn rs_samples_stay_in_the_box(eps in 0.0f64..1.0, len in 0usize..50, seed in any::<u64>()) {
        let d = sample_rs_delta(eps, len, &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(d.len(), len);
        prop_assert!(d.iter().all(|x| x.abs() <= eps));
    }

    #[test]
    fn epsilon_ramp_is_monotone(a in 0.0f64..1.0, extra in 0.0f64..1.0, epochs in 1usize..200) {
        let s = EpsilonSchedule::new(a, a + extra, epochs).unwrap();
        let values: Vec<f64> = (0..epochs).map(|e| epsilon_at(e, &s).unwrap()).collect();
        prop_assert_eq!(values[0], a);
        if epochs > 1 {
            prop_assert!((values[epochs - 1] - (a + extra)).abs() <= 1e-12);
        }
        prop_assert!(values.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(epsilon_at(epochs, &s).is_err());
    }

    #[test]
    fn mixture_weights_lie_on_the_simplex(values in prop::collection::vec(-30.0f64..30.0, 30)) {
        let s = space();
        let alpha = ArchWeights::from_flat(&s, values).unwrap();
        for edge in softmax_weights(&alpha).chunks(s.num_ops()) {
            prop_assert!(edge.iter().all(|&p| p >= 0.0));
            prop_assert!((edge.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn discretize_ignores_per_edge_shifts(values in prop::collection::vec(-5.0f64..5.0, 30), shifts in prop::collection::vec(-100.0f64..100.0, 5)) {
        let s = space();
        let alpha = ArchWeights::from_flat(&s, values.clone()).unwrap();
        let shifted: Vec<f64> = values.iter().enumerate().map(|(i, v)| v + shifts[i / s.num_ops()]).collect();
        // shifting can merge near-ties by rounding; only compare clear winners
        let clear = (0..s.num_edges()).all(|e| {
            let mut edge = alpha.edge(e).to_vec();
            edge.sort_by(|a, b| b.total_cmp(a));
            edge[0] - edge[1] > 1e-9
        });
        prop_assume!(clear);
        let back = ArchWeights::from_flat(&s, shifted).unwrap();
        prop_assert_eq!(discretize(&alpha), discretize(&back));
    }

    #[test]
    fn encodings_round_trip_and_proportions_are_fractions(ops in prop::collection::vec(0usize..6, 5)) {
        let s = space();
        let arch = DiscreteArch::new(&s, ops).unwrap();
        prop_assert_eq!(&DiscreteArch::parse_encoding(&s, &arch.encoding()).unwrap(), &arch);
        prop_assert_eq!(&DiscreteArch::from_listing(&s, &arch.listing(&s)).unwrap(), &arch);
        let k = param_free_proportion(&s, &arch) * s.num_edges() as f64;
        prop_assert!((k - k.round()).abs() < 1e-12);
        let free = arch.ops().iter().filter(|&&o| s.corpus[o].is_parameter_free()).count();
        prop_assert_eq!(k.round() as usize, free);
    }

    #[test]
    fn grid_is_symmetric_and_nests(radius in 0.0f64..10.0, half in 1usize..30) {
        let n = 2 * half + 1;
        for i in 0..n {
            prop_assert_eq!(grid_coordinate(radius, i, n), -grid_coordinate(radius, n - 1 - i, n));
        }
        prop_assert_eq!(grid_coordinate(radius, half, n), 0.0);
        // point i of the r/2 grid equals point j of the r grid whenever the
        // integer offsets line up
        for i in 0..n {
            let offset = 2 * i as i64 - (n as i64 - 1);
            if offset % 2 == 0 {
                let twice = offset / 2 + n as i64 - 1;
                if twice % 2 == 0 {
                    let j = (twice / 2) as usize;
                    prop_assert_eq!(grid_coordinate(radius / 2.0, i, n).to_bits(), grid_coordinate(radius, j, n).to_bits());
                }
            }
        }
    }

    #[test]
    fn backward_is_linear(x in prop::collection::vec(-2.0f64..2.0, 6), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        // f = sum(tanh(x) * x), g = sum(sigmoid(x))
        let grads = |ca: f64, cb: f64| {
            let mut t = Tape::new();
            let v = t.param(Tensor::vector(x.clone()));
            let th = t.tanh(v).unwrap();
            let fm = t.mul(th, v).unwrap();
            let f = t.sum(fm).unwrap();
            let sg = t.sigmoid(v).unwrap();
            let g = t.sum(sg).unwrap();
            let fa = t.scale(f, ca).unwrap();
            let gb = t.scale(g, cb).unwrap();
            let root = t.add(fa, gb).unwrap();
            t.backward(root).unwrap().wrt(v).data().to_vec()
        };
        let (gf, gg, both) = (grads(1.0, 0.0), grads(0.0, 1.0), grads(a, b));
        for k in 0..x.len() {
            prop_assert!((both[k] - (a * gf[k] + b * gg[k])).abs() <= 1e-12 * (1.0 + both[k].abs()));
        }
    }

    #[test]
    fn noise_replays_bit_identically(seed in any::<u64>(), rows in 1usize..5, cols in 1usize..5) {
        let draw = || {
            let mut t = Tape::with_noise_seed(seed);
            let v = t.constant(Tensor::zeros(&[rows, cols]));
            let n = t.noise(v).unwrap();
            t.value(n).data().iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        };
        prop_assert_eq!(draw(), draw());
    }

    #[test]
    fn quadratic_hvp_is_symmetric(entries in prop::collection::vec(-2.0f64..2.0, 16), u in prop::collection::vec(-1.0f64..1.0, 4), v in prop::collection::vec(-1.0f64..1.0, 4)) {
        prop_assume!(u.iter().any(|x| x.abs() > 1e-3) && v.iter().any(|x| x.abs() > 1e-3));
        let mut h = entries;
        for i in 0..4 {
            for j in 0..i {
                h[j * 4 + i] = h[i * 4 + j];
            }
        }
        let q = QuadraticObjective::centered(h).unwrap();
        let p = [0.3, -0.2, 0.1, 0.5];
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let uhv = dot(&u, &hvp_fd(&q, &p, &v, 1e-3).unwrap());
        let vhu = dot(&v, &hvp_fd(&q, &p, &u, 1e-3).unwrap());
        prop_assert!((uhv - vhu).abs() <= 1e-6);
    }

    #[test]
    fn trajectories_round_trip_through_jsonl(
        losses in prop::collection::vec((finite(), finite(), 0.0f64..1.0, 0.0f64..1.0), 1..6),
        lambda in prop::option::of(finite()),
        alpha in prop::collection::vec(finite(), 30),
        ops in prop::collection::vec(0usize..6, 5),
        aborted in prop::option::of("[a-z ]{0,12}"),
    ) {
        let s = space();
        let arch = DiscreteArch::new(&s, ops).unwrap();
        let records = losses
            .iter()
            .enumerate()
            .map(|(epoch, &(train_loss, val_loss, val_accuracy, epsilon))| TrajectoryRecord {
                epoch,
                train_loss,
                val_loss,
                val_accuracy,
                epsilon,
                lambda_max_estimate: lambda,
                trace_estimate: lambda.map(|l| l / 3.0),
                discrete_arch: arch.listing(&s),
                param_free_proportion: param_free_proportion(&s, &arch),
                oracle_test_error: Some(val_accuracy / 7.0),
                wall_seconds: None,
            })
            .collect();
        let t = Trajectory {
            records,
            final_record: FinalRecord {
                kind: "final".into(),
                method: "adv".into(),
                seed: 4,
                encoding: arch.encoding(),
                discrete_arch: arch.listing(&s),
                alpha,
                aborted,
            },
        };
        let text = t.to_jsonl();
        let back = Trajectory::from_jsonl(&text).unwrap();
        prop_assert_eq!(&back, &t);
        prop_assert_eq!(back.to_jsonl(), text);
    }
}
