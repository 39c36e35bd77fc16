//! Matrix-free curvature probes, landscape scans and the discretization-drop estimate.

mod hessian;
mod landscape;
mod objective;
mod taylor;

pub use hessian::{
    fd_step_for, hvp_fd, lambda_max_power, probe_hessian, trace_hutchinson, HessianProbe,
    PowerConfig, ProbeSettings, TraceMode,
};
pub use landscape::{grid_coordinate, landscape_scan, GridCell, LandscapeGrid, LandscapeMeta};
pub use objective::{ArchObjective, HessianBasis, QuadraticObjective, ValidationObjective};
pub use taylor::{smoothed_gap_mc, taylor_drop, TaylorDropReport};

use thiserror::Error;

use crate::supernet::SupernetError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("hessian matrix is not symmetric")]
    NotSymmetric,
    #[error("gradient evaluation produced a non-finite value")]
    NonFiniteGradient,
    #[error("finite-difference step must be positive, got {0}")]
    BadStep(f64),
    #[error("direction vector has zero or non-finite norm")]
    ZeroDirection,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Supernet(#[from] SupernetError),
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Cyclic Jacobi eigenvalues of a symmetric row-major matrix.
    fn jacobi_eigenvalues(a: &[f64], n: usize) -> Vec<f64> {
        let mut m = a.to_vec();
        for _sweep in 0..100 {
            let off: f64 = (0..n)
                .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
                .map(|(i, j)| m[i * n + j].powi(2))
                .sum();
            if off < 1e-22 {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    let apq = m[p * n + q];
                    if apq.abs() < 1e-300 {
                        continue;
                    }
                    let theta = (m[q * n + q] - m[p * n + p]) / (2.0 * apq);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let (mkp, mkq) = (m[k * n + p], m[k * n + q]);
                        m[k * n + p] = c * mkp - s * mkq;
                        m[k * n + q] = s * mkp + c * mkq;
                    }
                    for k in 0..n {
                        let (mpk, mqk) = (m[p * n + k], m[q * n + k]);
                        m[p * n + k] = c * mpk - s * mqk;
                        m[q * n + k] = s * mpk + c * mqk;
                    }
                }
            }
        }
        (0..n).map(|i| m[i * n + i]).collect()
    }

    fn diag(values: &[f64]) -> QuadraticObjective {
        let n = values.len();
        let mut h = vec![0.0; n * n];
        for (i, v) in values.iter().enumerate() {
            h[i * n + i] = *v;
        }
        QuadraticObjective::centered(h).unwrap()
    }

    fn random_symmetric(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut h = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let v = rng.random_range(-1.0..1.0);
                h[i * n + j] = v;
                h[j * n + i] = v;
            }
        }
        h
    }

    fn random_psd(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let b: Vec<f64> = (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut h = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                h[i * n + j] = (0..n).map(|k| b[k * n + i] * b[k * n + j]).sum();
            }
        }
        h
    }

    #[test]
    fn jacobi_oracle_on_known_spectrum() {
        let ev = jacobi_eigenvalues(&[2.0, 1.0, 1.0, 2.0], 2);
        let mut ev = ev;
        ev.sort_by(f64::total_cmp);
        assert!((ev[0] - 1.0).abs() < 1e-12 && (ev[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn hvp_is_exact_and_linear_on_quadratics() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = random_symmetric(6, &mut rng);
        let q = QuadraticObjective::centered(h.clone()).unwrap();
        let a: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let hv = hvp_fd(&q, &a, &v, 1e-3).unwrap();
        for i in 0..6 {
            let exact: f64 = (0..6).map(|j| h[i * 6 + j] * v[j]).sum();
            assert!((hv[i] - exact).abs() < 1e-10);
        }
        let v2: Vec<f64> = v.iter().map(|x| 2.0 * x).collect();
        let hv2 = hvp_fd(&q, &a, &v2, 1e-3).unwrap();
        for (a, b) in hv.iter().zip(&hv2) {
            assert!((2.0 * a - b).abs() < 1e-10);
        }
        assert_eq!(hvp_fd(&q, &a, &[0.0; 6], 1e-3), Err(AnalysisError::ZeroDirection));
        assert_eq!(hvp_fd(&q, &a, &v, 0.0), Err(AnalysisError::BadStep(0.0)));
    }

    #[test]
    fn power_iteration_diagonal_and_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cfg = PowerConfig {
            max_iters: 200,
            tol: 1e-10,
            ..PowerConfig::default()
        };
        let p = lambda_max_power(&diag(&[2.0, -3.0]), &[0.0, 0.0], &cfg, HessianBasis::default(), &mut rng)
            .unwrap();
        assert!(p.converged);
        assert!((p.lambda_max + 3.0).abs() < 1e-6, "{}", p.lambda_max);

        let p = lambda_max_power(&diag(&[1.0; 5]), &[0.0; 5], &PowerConfig::default(), HessianBasis::default(), &mut rng)
            .unwrap();
        assert!(p.converged);
        assert_eq!(p.iterations_used, 1);
        assert!((p.lambda_max - 1.0).abs() < 1e-10);

        let zero = diag(&[0.0; 3]);
        let p = lambda_max_power(&zero, &[0.0; 3], &PowerConfig::default(), HessianBasis::default(), &mut rng)
            .unwrap();
        assert_eq!(p.lambda_max, 0.0);
        assert!(p.iterations_used <= PowerConfig::default().max_iters);
    }

    #[test]
    fn power_iteration_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let n = 40;
        let h = random_symmetric(n, &mut rng);
        let ev = jacobi_eigenvalues(&h, n);
        let oracle = ev.iter().copied().fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
        let q = QuadraticObjective::centered(h).unwrap();
        let cfg = PowerConfig {
            max_iters: 5000,
            tol: 1e-12,
            ..PowerConfig::default()
        };
        let p = lambda_max_power(&q, &vec![0.0; n], &cfg, HessianBasis::default(), &mut rng).unwrap();
        assert!(
            ((p.lambda_max - oracle) / oracle).abs() < 1e-3,
            "{} vs {oracle}",
            p.lambda_max
        );
    }

    #[test]
    fn power_iteration_is_start_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let q = QuadraticObjective::centered(random_psd(10, &mut rng)).unwrap();
        let cfg = PowerConfig {
            max_iters: 1000,
            tol: 1e-10,
            ..PowerConfig::default()
        };
        let est: Vec<f64> = (0..10)
            .map(|s| {
                let mut r = ChaCha8Rng::seed_from_u64(s);
                lambda_max_power(&q, &[0.0; 10], &cfg, HessianBasis::default(), &mut r)
                    .unwrap()
                    .lambda_max
            })
            .collect();
        for e in &est {
            assert!(((e - est[0]) / est[0]).abs() < 1e-3);
        }
    }

    #[test]
    fn trace_estimates() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = diag(&[1.0, 2.0, 3.0]);
        let t = trace_hutchinson(&q, &[0.0; 3], TraceMode::Coordinate, 1e-3, &mut rng).unwrap();
        assert!((t - 6.0).abs() < 1e-10);
        // for diagonal H every Rademacher sample is exact
        let t = trace_hutchinson(&q, &[0.0; 3], TraceMode::Rademacher { num_samples: 4 }, 1e-3, &mut rng).unwrap();
        assert!((t - 6.0).abs() < 1e-10);
        let t = trace_hutchinson(&diag(&[0.0; 3]), &[0.0; 3], TraceMode::Rademacher { num_samples: 4 }, 1e-3, &mut rng)
            .unwrap();
        assert_eq!(t, 0.0);
        let scaled = diag(&[2.5, 5.0, 7.5]);
        let t = trace_hutchinson(&scaled, &[0.0; 3], TraceMode::Coordinate, 1e-3, &mut rng).unwrap();
        assert!((t - 15.0).abs() < 1e-10);
        assert!(trace_hutchinson(&q, &[0.0; 3], TraceMode::Rademacher { num_samples: 0 }, 1e-3, &mut rng).is_err());
    }

    #[test]
    fn taylor_drop_is_exact_for_quadratics() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cfg = PowerConfig {
            max_iters: 500,
            tol: 1e-9,
            ..PowerConfig::default()
        };
        for _ in 0..100 {
            let n = rng.random_range(2..8);
            let h = random_psd(n, &mut rng);
            let a: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let q = QuadraticObjective::new(h, vec![0.0; n], a.clone(), 0.3).unwrap();
            let target: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let r = taylor_drop(&q, &a, &target, &cfg, &mut rng).unwrap();
            assert!((r.measured_drop - r.quadratic_term).abs() <= 1e-8);
            assert!(r.quadratic_term <= r.bound_c * (1.0 + 1e-6) + 1e-12, "{r:?}");
        }
        let q = diag(&[1.0, 2.0]);
        let r = taylor_drop(&q, &[1.0, 0.0], &[1.0, 0.0], &cfg, &mut rng).unwrap();
        assert_eq!((r.measured_drop, r.quadratic_term, r.bound_c), (0.0, 0.0, 0.0));
    }

    #[test]
    fn smoothed_gap_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let q = diag(&[2.0, 4.0]);
        let g = smoothed_gap_mc(&q, &[0.0, 0.0], 0.3, 100_000, &mut rng).unwrap();
        assert!((g - 0.09).abs() < 0.09 * 0.02, "{g}");
        assert_eq!(smoothed_gap_mc(&q, &[0.0, 0.0], 0.0, 10, &mut rng).unwrap(), 0.0);
        let lin = QuadraticObjective::new(vec![0.0; 4], vec![1.0, -2.0], vec![0.0; 2], 0.0).unwrap();
        let g = smoothed_gap_mc(&lin, &[0.5, 0.5], 0.3, 100_000, &mut rng).unwrap();
        assert!(g.abs() < 5e-3, "{g}");
    }

    #[test]
    fn landscape_of_a_quadratic() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let h = random_psd(4, &mut rng);
        let center = vec![0.2, -0.1, 0.4, 0.0];
        let q = QuadraticObjective::new(h.clone(), vec![0.0; 4], center.clone(), 0.0).unwrap();
        let a = vec![0.5, 0.5, -0.5, 0.25];
        let grid = landscape_scan(&q, &a, 1.0, 5, HessianBasis::default(), &mut rng).unwrap();
        assert_eq!(grid.cells.len(), 25);
        assert!(!grid.gradient_fallback);
        let n1: f64 = grid.direction_1.iter().map(|x| x * x).sum::<f64>().sqrt();
        let n2: f64 = grid.direction_2.iter().map(|x| x * x).sum::<f64>().sqrt();
        let d12: f64 = grid.direction_1.iter().zip(&grid.direction_2).map(|(a, b)| a * b).sum();
        assert!((n1 - 1.0).abs() < 1e-12 && (n2 - 1.0).abs() < 1e-12 && d12.abs() < 1e-10);
        assert_eq!(grid.center().val_loss, q.loss(&a).unwrap());
        for c in &grid.cells {
            let p: Vec<f64> = (0..4)
                .map(|k| a[k] + c.x * grid.direction_1[k] + c.y * grid.direction_2[k] - center[k])
                .collect();
            let quad: f64 = (0..4)
                .map(|i| p[i] * (0..4).map(|j| h[i * 4 + j] * p[j]).sum::<f64>())
                .sum();
            assert!((c.val_loss - 0.5 * quad).abs() < 1e-10);
        }
    }

    #[test]
    fn landscape_degenerate_and_restricted_cases() {
        let q = diag(&[1.0, 2.0, 3.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let grid = landscape_scan(&q, &[0.3, 0.1, 0.2], 0.0, 3, HessianBasis::default(), &mut rng).unwrap();
        let c = grid.center().val_loss;
        assert!(grid.cells.iter().all(|cell| cell.val_loss == c));

        let at_min = landscape_scan(&q, &[0.0; 3], 1.0, 3, HessianBasis::default(), &mut rng).unwrap();
        assert!(at_min.gradient_fallback);
        assert!(landscape_scan(&q, &[0.0; 3], 1.0, 4, HessianBasis::default(), &mut rng).is_err());
    }

    #[test]
    fn half_radius_scan_shares_points_exactly() {
        let q = diag(&[1.0, 2.0, 3.0]);
        let a = [0.3, 0.1, 0.2];
        let full = landscape_scan(&q, &a, 0.8, 9, HessianBasis::default(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let half = landscape_scan(&q, &a, 0.4, 9, HessianBasis::default(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        // half-grid index i covers the same coordinate as full-grid index 2 + i/2 for even i
        for iy in (0..9).step_by(2) {
            for ix in (0..9).step_by(2) {
                let h = &half.cells[iy * 9 + ix];
                let f = &full.cells[(2 + iy / 2) * 9 + 2 + ix / 2];
                assert_eq!((h.x, h.y, h.val_loss), (f.x, f.y, f.val_loss));
            }
        }
    }

    #[test]
    fn landscape_csv_round_trip() {
        let q = diag(&[1.0, 2.0]);
        let grid = landscape_scan(&q, &[0.3, 0.1], 0.5, 3, HessianBasis::PostSoftmaxWeights, &mut ChaCha8Rng::seed_from_u64(1))
            .unwrap();
        let csv = grid.to_csv();
        assert!(csv.starts_with("x,y,val_loss,val_acc\n"));
        let back = LandscapeGrid::from_csv(grid.meta(), &csv).unwrap();
        assert_eq!(back, grid);
    }

    #[test]
    fn hessian_symmetry_on_a_smooth_loss() {
        use crate::autodiff::Tensor;
        use crate::supernet::{ArchWeights, CellSpace, OpKind, Samples, Supernet};
        let space = CellSpace::dense(2, vec![OpKind::Skip, OpKind::LinearTanh, OpKind::LinearSigmoid], 3).unwrap();
        let net = Supernet::new(space.clone(), 2, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let state = net.init_state(&mut rng);
        let data: Vec<f64> = (0..40).map(|_| rng.random_range(-1.0..1.0)).collect();
        let samples = Samples::new(Tensor::matrix(20, 2, data).unwrap(), (0..20).map(|i| i % 2).collect()).unwrap();
        let alpha = ArchWeights::init(&space, &mut rng);
        let obj = ValidationObjective::new(&net, &state, &samples, HessianBasis::PreSoftmaxAlpha, 0);
        let a = obj.base_point(&alpha);
        let u: Vec<f64> = (0..a.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..a.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let h = fd_step_for(&a);
        let uhv: f64 = u.iter().zip(hvp_fd(&obj, &a, &v, h).unwrap()).map(|(x, y)| x * y).sum();
        let vhu: f64 = v.iter().zip(hvp_fd(&obj, &a, &u, h).unwrap()).map(|(x, y)| x * y).sum();
        assert!((uhv - vhu).abs() < 1e-6, "{uhv} vs {vhu}");

        // step-halving consistency
        let coarse = hvp_fd(&obj, &a, &v, 1e-3).unwrap();
        let fine = hvp_fd(&obj, &a, &v, 1e-4).unwrap();
        let scale = coarse.iter().map(|x| x * x).sum::<f64>().sqrt();
        let diff = coarse.iter().zip(&fine).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        assert!(diff <= 1e-3 * scale);

        // probes leave their inputs untouched
        let before = (state.clone(), a.clone());
        let _ = probe_hessian(&obj, &a, &ProbeSettings::default(), &mut rng).unwrap();
        assert_eq!(before, (state, a));
    }
}
