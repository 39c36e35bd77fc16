use rand::Rng;
use serde::{Deserialize, Serialize};

use super::SearchError;
use crate::supernet::{ArchWeights, GradRequest, Mixing, Samples, Supernet, SupernetState};

/// Norm of the perturbation ball.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    #[default]
    Linf,
    L2,
}

impl Norm {
    pub fn of(self, v: &[f64]) -> f64 {
        match self {
            Norm::Linf => v.iter().fold(0.0f64, |m, x| m.max(x.abs())),
            Norm::L2 => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
        }
    }
}

/// Where projected gradient ascent starts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PgdStart {
    #[default]
    Zero,
    /// Uniform in the `linf` box of radius eps, projected onto the ball.
    Random,
}

/// Direction of each ascent step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PgdAscent {
    /// `delta + step_size * grad`.
    #[default]
    Gradient,
    /// `delta + step_size * sign(grad)`, steepest ascent for `linf`.
    Sign,
}

/// Stabilizer applied to the weight step (or, for `Hessreg`, the arch step).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PerturbationKind {
    /// Plain first-order DARTS.
    #[serde(alias = "darts")]
    None,
    /// Uniform random perturbation of the mixture weights.
    Rs,
    /// Projected gradient ascent on the mixture weights.
    Adv {
        #[serde(default = "default_pgd_steps")]
        steps: usize,
        /// `None` uses `2.5 * eps / steps`.
        #[serde(default)]
        step_size: Option<f64>,
        #[serde(default)]
        norm: Norm,
        #[serde(default)]
        start: PgdStart,
        #[serde(default)]
        ascent: PgdAscent,
    },
    /// Finite-difference Hessian-norm penalty on the validation loss.
    Hessreg {
        #[serde(default = "default_num_directions")]
        num_directions: usize,
        #[serde(default = "default_penalty_coef")]
        penalty_coef: f64,
        #[serde(default = "default_fd_step")]
        fd_step: f64,
    },
}

fn default_pgd_steps() -> usize {
    7
}
fn default_num_directions() -> usize {
    4
}
fn default_penalty_coef() -> f64 {
    0.1
}
fn default_fd_step() -> f64 {
    1e-3
}

impl Default for PerturbationKind {
    fn default() -> Self {
        PerturbationKind::None
    }
}

pub const METHOD_NAMES: [&str; 4] = ["darts", "rs", "adv", "hessreg"];

impl PerturbationKind {
    /// Default settings for a method name: `darts`, `rs`, `adv` or `hessreg`.
    pub fn from_method(name: &str) -> Result<Self, SearchError> {
        Ok(match name {
            "darts" | "none" => PerturbationKind::None,
            "rs" => PerturbationKind::Rs,
            "adv" => PerturbationKind::Adv {
                steps: default_pgd_steps(),
                step_size: None,
                norm: Norm::Linf,
                start: PgdStart::Zero,
                ascent: PgdAscent::Gradient,
            },
            "hessreg" => PerturbationKind::Hessreg {
                num_directions: default_num_directions(),
                penalty_coef: default_penalty_coef(),
                fd_step: default_fd_step(),
            },
            other => {
                return Err(SearchError::InvalidConfig(format!(
                    "unknown method `{other}` (expected one of {})",
                    METHOD_NAMES.join(", ")
                )))
            }
        })
    }

    pub fn method_name(&self) -> &'static str {
        match self {
            PerturbationKind::None => "darts",
            PerturbationKind::Rs => "rs",
            PerturbationKind::Adv { .. } => "adv",
            PerturbationKind::Hessreg { .. } => "hessreg",
        }
    }

    pub fn validate(&self) -> Result<(), SearchError> {
        match *self {
            PerturbationKind::Adv { steps, step_size, .. } => {
                if steps == 0 {
                    return Err(SearchError::InvalidConfig("pgd steps must be at least 1".into()));
                }
                if let Some(s) = step_size {
                    if !(s > 0.0) || !s.is_finite() {
                        return Err(SearchError::InvalidConfig(format!("pgd step size must be > 0, got {s}")));
                    }
                }
            }
            PerturbationKind::Hessreg {
                num_directions,
                penalty_coef,
                fd_step,
            } => {
                if num_directions == 0 {
                    return Err(SearchError::InvalidConfig("num_directions must be at least 1".into()));
                }
                if !(penalty_coef >= 0.0) || !penalty_coef.is_finite() {
                    return Err(SearchError::InvalidConfig(format!("penalty_coef must be >= 0, got {penalty_coef}")));
                }
                if !(fd_step > 0.0) {
                    return Err(SearchError::InvalidConfig(format!("fd_step must be > 0, got {fd_step}")));
                }
            }
            PerturbationKind::None | PerturbationKind::Rs => {}
        }
        Ok(())
    }
}

/// Linear ramp of the perturbation radius over the search.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSchedule {
    pub eps_start: f64,
    pub eps_end: f64,
    pub total_epochs: usize,
}

impl EpsilonSchedule {
    pub fn new(eps_start: f64, eps_end: f64, total_epochs: usize) -> Result<Self, SearchError> {
        if !(0.0 <= eps_start && eps_start <= eps_end && eps_end.is_finite()) {
            return Err(SearchError::InvalidConfig(format!(
                "need 0 <= eps_start <= eps_end, got {eps_start} and {eps_end}"
            )));
        }
        if total_epochs == 0 {
            return Err(SearchError::InvalidConfig("total_epochs must be at least 1".into()));
        }
        Ok(Self {
            eps_start,
            eps_end,
            total_epochs,
        })
    }
}

pub fn epsilon_at(epoch: usize, schedule: &EpsilonSchedule) -> Result<f64, SearchError> {
    if epoch >= schedule.total_epochs {
        return Err(SearchError::InvalidConfig(format!(
            "epoch {epoch} outside a {}-epoch schedule",
            schedule.total_epochs
        )));
    }
    if schedule.total_epochs == 1 {
        return Ok(schedule.eps_start);
    }
    let t = epoch as f64 / (schedule.total_epochs - 1) as f64;
    Ok(schedule.eps_start + (schedule.eps_end - schedule.eps_start) * t)
}

/// iid uniform entries in `[-eps, eps]`.
pub fn sample_rs_delta<R: Rng + ?Sized>(eps: f64, len: usize, rng: &mut R) -> Vec<f64> {
    if eps == 0.0 {
        return vec![0.0; len];
    }
    (0..len).map(|_| rng.random_range(-eps..=eps)).collect()
}

/// Projection onto the `norm` ball of radius `eps`, in place.
pub fn project_ball(delta: &mut [f64], eps: f64, norm: Norm) {
    match norm {
        Norm::Linf => {
            for d in delta.iter_mut() {
                *d = d.clamp(-eps, eps);
            }
        }
        Norm::L2 => {
            let n = Norm::L2.of(delta);
            // a rescaled vector can come out an ulp long; leave it, so that
            // projecting twice changes nothing
            if n > eps * (1.0 + 4.0 * f64::EPSILON) {
                let s = eps / n;
                for d in delta.iter_mut() {
                    *d *= s;
                }
            }
        }
    }
}

/// Inner-maximization settings, resolved against the current radius.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PgdSettings {
    pub eps: f64,
    pub steps: usize,
    pub step_size: f64,
    pub norm: Norm,
    pub start: PgdStart,
    pub ascent: PgdAscent,
}

impl PgdSettings {
    /// Settings for an `Adv` perturbation at radius `eps`; `None` otherwise.
    pub fn from_kind(kind: &PerturbationKind, eps: f64) -> Option<Self> {
        match *kind {
            PerturbationKind::Adv {
                steps,
                step_size,
                norm,
                start,
                ascent,
            } => Some(Self {
                eps,
                steps,
                step_size: step_size.unwrap_or(2.5 * eps / steps as f64),
                norm,
                start,
                ascent,
            }),
            _ => None,
        }
    }
}

/// Projected gradient ascent of a loss over a perturbation of length `dim`.
///
/// `loss_grad` returns the loss and its gradient at a perturbation.
pub fn pgd_maximize<F, R>(
    mut loss_grad: F,
    dim: usize,
    settings: &PgdSettings,
    rng: &mut R,
) -> Result<Vec<f64>, SearchError>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>), SearchError>,
    R: Rng + ?Sized,
{
    if settings.eps == 0.0 {
        return Ok(vec![0.0; dim]);
    }
    let mut delta = match settings.start {
        PgdStart::Zero => vec![0.0; dim],
        PgdStart::Random => {
            let mut d = sample_rs_delta(settings.eps, dim, rng);
            project_ball(&mut d, settings.eps, settings.norm);
            d
        }
    };
    for _ in 0..settings.steps {
        let (_, grad) = loss_grad(&delta)?;
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(SearchError::NonFinite {
                what: "perturbation gradient",
            });
        }
        for (d, g) in delta.iter_mut().zip(&grad) {
            let dir = match settings.ascent {
                PgdAscent::Gradient => *g,
                PgdAscent::Sign => {
                    if *g > 0.0 {
                        1.0
                    } else if *g < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                }
            };
            *d += settings.step_size * dir;
        }
        project_ball(&mut delta, settings.eps, settings.norm);
    }
    Ok(delta)
}

/// Adversarial perturbation of the post-softmax mixture weights on a batch.
#[allow(clippy::too_many_arguments)]
pub fn pgd_delta<R: Rng + ?Sized>(
    net: &Supernet,
    state: &SupernetState,
    alpha: &ArchWeights,
    batch: &Samples,
    noise_seed: u64,
    settings: &PgdSettings,
    rng: &mut R,
) -> Result<Vec<f64>, SearchError> {
    pgd_maximize(
        |delta| {
            let eval = net.evaluate(
                state,
                Mixing::Alpha {
                    alpha,
                    delta: Some(delta),
                },
                batch,
                noise_seed,
                GradRequest::DELTA,
            )?;
            Ok((eval.loss, eval.delta_grad.expect("requested perturbation gradient")))
        },
        net.space().arch_dim(),
        settings,
        rng,
    )
}
