use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::objective::{ArchObjective, HessianBasis};
use super::AnalysisError;

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Default finite-difference step: `1e-3 * (max |a_i| + 1)`.
pub fn fd_step_for(point: &[f64]) -> f64 {
    let inf = point.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    1e-3 * (inf + 1.0)
}

/// Hessian-vector product by central differences of the gradient along
/// the unit direction of `v`, rescaled by `|v|`.
pub fn hvp_fd<O: ArchObjective + ?Sized>(
    objective: &O,
    point: &[f64],
    v: &[f64],
    h: f64,
) -> Result<Vec<f64>, AnalysisError> {
    if !(h > 0.0) {
        return Err(AnalysisError::BadStep(h));
    }
    if v.len() != point.len() {
        return Err(AnalysisError::Dimension {
            expected: point.len(),
            got: v.len(),
        });
    }
    let scale = norm(v);
    if scale == 0.0 || !scale.is_finite() {
        return Err(AnalysisError::ZeroDirection);
    }
    let plus: Vec<f64> = point.iter().zip(v).map(|(a, d)| a + h * d / scale).collect();
    let minus: Vec<f64> = point.iter().zip(v).map(|(a, d)| a - h * d / scale).collect();
    let gp = objective.gradient(&plus)?;
    let gm = objective.gradient(&minus)?;
    let out: Vec<f64> = gp
        .iter()
        .zip(&gm)
        .map(|(p, m)| (p - m) / (2.0 * h) * scale)
        .collect();
    if out.iter().any(|x| !x.is_finite()) {
        return Err(AnalysisError::NonFiniteGradient);
    }
    Ok(out)
}

/// Power-iteration settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PowerConfig {
    pub max_iters: usize,
    pub tol: f64,
    /// Finite-difference step; `None` uses [`fd_step_for`].
    pub fd_step: Option<f64>,
    pub max_restarts: usize,
}

impl Default for PowerConfig {
    fn default() -> Self {
        Self {
            max_iters: 50,
            tol: 1e-4,
            fd_step: None,
            max_restarts: 3,
        }
    }
}

impl PowerConfig {
    pub fn step_for(&self, point: &[f64]) -> f64 {
        self.fd_step.unwrap_or_else(|| fd_step_for(point))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HessianProbe {
    /// Largest-magnitude eigenvalue; the sign comes from the Rayleigh quotient.
    pub lambda_max: f64,
    pub trace_estimate: Option<f64>,
    pub iterations_used: usize,
    pub converged: bool,
    pub basis: HessianBasis,
}

fn random_unit<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = norm(&v);
        if n > 0.0 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Dominant Hessian eigenvalue by power iteration on [`hvp_fd`].
///
/// Stops when successive Rayleigh quotients agree to `tol` (relative) or
/// the eigen-residual `|Hv - rho v|` falls below `tol * |rho|`.
pub fn lambda_max_power<O: ArchObjective + ?Sized, R: Rng + ?Sized>(
    objective: &O,
    point: &[f64],
    config: &PowerConfig,
    basis: HessianBasis,
    rng: &mut R,
) -> Result<HessianProbe, AnalysisError> {
    if config.max_iters == 0 {
        return Err(AnalysisError::InvalidConfig("max_iters must be at least 1".into()));
    }
    let dim = objective.dim();
    let h = config.step_for(point);
    let mut restarts = 0;
    let mut v = random_unit(dim, rng);
    let mut prev: Option<f64> = None;
    let mut rho = 0.0;
    let mut iters = 0;
    let mut converged = false;

    while iters < config.max_iters {
        iters += 1;
        let w = hvp_fd(objective, point, &v, h)?;
        let wn = norm(&w);
        if wn == 0.0 {
            if restarts >= config.max_restarts {
                // H annihilates every start vector tried: treat as the zero matrix
                return Ok(HessianProbe {
                    lambda_max: 0.0,
                    trace_estimate: None,
                    iterations_used: iters,
                    converged: true,
                    basis,
                });
            }
            restarts += 1;
            v = random_unit(dim, rng);
            prev = None;
            continue;
        }
        rho = dot(&v, &w);
        let residual = norm(
            &w.iter()
                .zip(&v)
                .map(|(wi, vi)| wi - rho * vi)
                .collect::<Vec<_>>(),
        );
        let settled = prev.is_some_and(|p| (rho - p).abs() <= config.tol * rho.abs());
        if settled || residual <= config.tol * rho.abs() {
            converged = true;
            break;
        }
        prev = Some(rho);
        v = w.into_iter().map(|x| x / wn).collect();
    }
    Ok(HessianProbe {
        lambda_max: rho,
        trace_estimate: None,
        iterations_used: iters,
        converged,
        basis,
    })
}

/// Probe vectors for [`trace_hutchinson`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceMode {
    /// Mean of `z^T H z` over random `z` with iid `+-1` entries.
    Rademacher { num_samples: usize },
    /// Sum of `e_i^T H e_i` over coordinate vectors; exact up to the FD error.
    Coordinate,
}

/// Hutchinson estimate of `Tr(H)` using [`hvp_fd`].
pub fn trace_hutchinson<O: ArchObjective + ?Sized, R: Rng + ?Sized>(
    objective: &O,
    point: &[f64],
    mode: TraceMode,
    h: f64,
    rng: &mut R,
) -> Result<f64, AnalysisError> {
    let dim = objective.dim();
    match mode {
        TraceMode::Rademacher { num_samples } => {
            if num_samples == 0 {
                return Err(AnalysisError::InvalidConfig("num_samples must be at least 1".into()));
            }
            let mut total = 0.0;
            for _ in 0..num_samples {
                let z: Vec<f64> = (0..dim)
                    .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
                    .collect();
                total += dot(&z, &hvp_fd(objective, point, &z, h)?);
            }
            Ok(total / num_samples as f64)
        }
        TraceMode::Coordinate => {
            let mut total = 0.0;
            let mut e = vec![0.0; dim];
            for i in 0..dim {
                e[i] = 1.0;
                total += hvp_fd(objective, point, &e, h)?[i];
                e[i] = 0.0;
            }
            Ok(total)
        }
    }
}

/// Settings for a combined spectral-norm and trace probe.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeSettings {
    pub power: PowerConfig,
    pub trace: TraceMode,
    pub basis: HessianBasis,
}

impl Default for ProbeSettings {
    fn default() -> Self {
        Self {
            power: PowerConfig::default(),
            trace: TraceMode::Rademacher { num_samples: 8 },
            basis: HessianBasis::PreSoftmaxAlpha,
        }
    }
}

pub fn probe_hessian<O: ArchObjective + ?Sized, R: Rng + ?Sized>(
    objective: &O,
    point: &[f64],
    settings: &ProbeSettings,
    rng: &mut R,
) -> Result<HessianProbe, AnalysisError> {
    let mut probe = lambda_max_power(objective, point, &settings.power, settings.basis, rng)?;
    let h = settings.power.step_for(point);
    probe.trace_estimate = Some(trace_hutchinson(objective, point, settings.trace, h, rng)?);
    Ok(probe)
}
