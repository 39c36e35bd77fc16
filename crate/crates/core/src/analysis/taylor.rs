use rand::Rng;
use serde::{Deserialize, Serialize};

use super::hessian::{dot, hvp_fd, lambda_max_power, norm, PowerConfig};
use super::objective::{ArchObjective, HessianBasis};
use super::AnalysisError;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaylorDropReport {
    /// `L(target) - L(point)`.
    pub measured_drop: f64,
    /// `1/2 v^T H v` with `v = target - point`, from a finite-difference HVP.
    pub quadratic_term: f64,
    /// `|lambda_max| * |v|^2`.
    pub bound_c: f64,
}

/// Second-order estimate of the loss change caused by moving from `point`
/// to `target`, next to the directly measured change.
///
/// For the discretization drop, `point` is the mixture-weight vector of the
/// search result and `target` the one-hot weights of its argmax, both in the
/// post-softmax basis.
pub fn taylor_drop<O: ArchObjective + ?Sized, R: Rng + ?Sized>(
    objective: &O,
    point: &[f64],
    target: &[f64],
    power: &PowerConfig,
    rng: &mut R,
) -> Result<TaylorDropReport, AnalysisError> {
    if target.len() != point.len() {
        return Err(AnalysisError::Dimension {
            expected: point.len(),
            got: target.len(),
        });
    }
    let v: Vec<f64> = target.iter().zip(point).map(|(t, p)| t - p).collect();
    let vn = norm(&v);
    if vn == 0.0 {
        return Ok(TaylorDropReport {
            measured_drop: 0.0,
            quadratic_term: 0.0,
            bound_c: 0.0,
        });
    }
    let measured_drop = objective.loss(target)? - objective.loss(point)?;
    let hv = hvp_fd(objective, point, &v, power.step_for(point))?;
    let quadratic_term = 0.5 * dot(&v, &hv);
    let probe = lambda_max_power(objective, point, power, HessianBasis::PostSoftmaxWeights, rng)?;
    let report = TaylorDropReport {
        measured_drop,
        quadratic_term,
        bound_c: probe.lambda_max.abs() * vn * vn,
    };
    if ![report.measured_drop, report.quadratic_term, report.bound_c]
        .iter()
        .all(|x| x.is_finite())
    {
        return Err(AnalysisError::NonFiniteGradient);
    }
    Ok(report)
}

/// Monte-Carlo mean of `L(point + delta) - L(point)` over `delta` uniform
/// in `[-eps, eps]^d`.
pub fn smoothed_gap_mc<O: ArchObjective + ?Sized, R: Rng + ?Sized>(
    objective: &O,
    point: &[f64],
    eps: f64,
    num_samples: usize,
    rng: &mut R,
) -> Result<f64, AnalysisError> {
    if num_samples == 0 {
        return Err(AnalysisError::InvalidConfig("num_samples must be at least 1".into()));
    }
    if !(eps >= 0.0) {
        return Err(AnalysisError::InvalidConfig(format!("eps must be >= 0, got {eps}")));
    }
    if eps == 0.0 {
        return Ok(0.0);
    }
    let base = objective.loss(point)?;
    let mut shifted = point.to_vec();
    let mut total = 0.0;
    for _ in 0..num_samples {
        for (s, p) in shifted.iter_mut().zip(point) {
            *s = p + rng.random_range(-eps..=eps);
        }
        total += objective.loss(&shifted)? - base;
    }
    Ok(total / num_samples as f64)
}
