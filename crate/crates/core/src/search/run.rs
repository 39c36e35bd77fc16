use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::optim::{Adam, AdamConfig, Sgd, SgdConfig};
use super::perturb::{epsilon_at, pgd_delta, sample_rs_delta, EpsilonSchedule, PerturbationKind, PgdSettings};
use super::trajectory::{FinalRecord, Trajectory, TrajectoryRecord};
use super::SearchError;
use crate::analysis::{hvp_fd, probe_hessian, ArchObjective, HessianBasis, ProbeSettings, ValidationObjective};
use crate::data::DatasetSplit;
use crate::supernet::{
    discretize, param_free_proportion, ArchWeights, DiscreteArch, GradRequest, Mixing, Samples, Supernet,
    SupernetState,
};

/// Looks up the test error of a discrete architecture, e.g. in a bench table.
pub trait TestErrorOracle {
    fn test_error(&self, arch: &DiscreteArch) -> Option<f64>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    pub perturbation: PerturbationKind,
    pub eps_start: f64,
    pub eps_end: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub weight_optim: SgdConfig,
    pub arch_optim: AdamConfig,
    pub seed: u64,
    /// Probe the Hessian every this many epochs (and always after the last);
    /// 0 probes only after the last epoch.
    pub probe_interval: usize,
    pub probe: ProbeSettings,
    /// Number of leading validation samples used by probes.
    pub probe_subset: usize,
    /// Noise-op seed shared by every probe and end-of-epoch evaluation.
    pub probe_noise_seed: u64,
    pub record_wall_time: bool,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            perturbation: PerturbationKind::None,
            eps_start: 0.03,
            eps_end: 0.3,
            epochs: 60,
            batch_size: 32,
            weight_optim: SgdConfig::default(),
            arch_optim: AdamConfig::default(),
            seed: 0,
            probe_interval: 5,
            probe: ProbeSettings::default(),
            probe_subset: 512,
            probe_noise_seed: 0,
            record_wall_time: false,
        }
    }
}

impl SearchConfig {
    pub fn schedule(&self) -> Result<EpsilonSchedule, SearchError> {
        EpsilonSchedule::new(self.eps_start, self.eps_end, self.epochs)
    }

    pub fn validate(&self) -> Result<(), SearchError> {
        self.perturbation.validate()?;
        self.schedule()?;
        if self.batch_size == 0 {
            return Err(SearchError::InvalidConfig("batch_size must be at least 1".into()));
        }
        let w = &self.weight_optim;
        let a = &self.arch_optim;
        let positive = [("lr_max", w.lr_max), ("lr_min", w.lr_min), ("arch lr", a.lr)];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(SearchError::InvalidConfig(format!("{name} must be > 0, got {v}")));
            }
        }
        if self.probe_subset == 0 {
            return Err(SearchError::InvalidConfig("probe_subset must be at least 1".into()));
        }
        Ok(())
    }

    fn probe_due(&self, epoch: usize) -> bool {
        epoch + 1 == self.epochs || (self.probe_interval > 0 && (epoch + 1) % self.probe_interval == 0)
    }
}

/// Everything a finished (or aborted) search leaves behind.
#[derive(Clone, Debug)]
pub struct SearchOutcome {
    pub trajectory: Trajectory,
    pub final_arch: DiscreteArch,
    pub alpha: ArchWeights,
    pub state: SupernetState,
}

impl SearchOutcome {
    pub fn aborted(&self) -> Option<&str> {
        self.trajectory.final_record.aborted.as_deref()
    }
}

/// `sum_e |H e|^2` over the given directions, by central differences of
/// the gradient.
pub fn hessian_penalty<O: ArchObjective + ?Sized>(
    objective: &O,
    point: &[f64],
    directions: &[Vec<f64>],
    fd_step: f64,
) -> Result<f64, SearchError> {
    let mut total = 0.0;
    for e in directions {
        let he = hvp_fd(objective, point, e, fd_step)?;
        total += he.iter().map(|x| x * x).sum::<f64>();
    }
    Ok(total)
}

/// Coordinate-wise central differences of [`hessian_penalty`].
pub fn hessian_penalty_gradient<O: ArchObjective + ?Sized>(
    objective: &O,
    point: &[f64],
    directions: &[Vec<f64>],
    fd_step: f64,
) -> Result<Vec<f64>, SearchError> {
    let mut shifted = point.to_vec();
    let mut grad = Vec::with_capacity(point.len());
    for i in 0..point.len() {
        shifted[i] = point[i] + fd_step;
        let up = hessian_penalty(objective, &shifted, directions, fd_step)?;
        shifted[i] = point[i] - fd_step;
        let down = hessian_penalty(objective, &shifted, directions, fd_step)?;
        shifted[i] = point[i];
        grad.push((up - down) / (2.0 * fd_step));
    }
    Ok(grad)
}

fn random_directions<R: Rng + ?Sized>(count: usize, dim: usize, rng: &mut R) -> Vec<Vec<f64>> {
    (0..count)
        .map(|_| loop {
            let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 0.0 {
                break v.into_iter().map(|x| x / n).collect();
            }
        })
        .collect()
}

/// One Adam step on the validation loss w.r.t. the architecture logits.
///
/// With `Hessreg`, the penalized objective is descended instead; its
/// directions are drawn from `rng`. Returns the unpenalized batch loss.
#[allow(clippy::too_many_arguments)]
pub fn arch_step<R: Rng + ?Sized>(
    net: &Supernet,
    state: &SupernetState,
    alpha: &mut ArchWeights,
    adam: &mut Adam,
    val_batch: &Samples,
    kind: &PerturbationKind,
    noise_seed: u64,
    rng: &mut R,
) -> Result<f64, SearchError> {
    let eval = net.evaluate(
        state,
        Mixing::Alpha { alpha, delta: None },
        val_batch,
        noise_seed,
        GradRequest::ARCH,
    )?;
    let mut grad = eval.arch_grad.expect("requested arch gradient");
    if let PerturbationKind::Hessreg {
        num_directions,
        penalty_coef,
        fd_step,
    } = *kind
    {
        let directions = random_directions(num_directions, alpha.as_slice().len(), rng);
        if penalty_coef > 0.0 {
            let obj = ValidationObjective::new(net, state, val_batch, HessianBasis::PreSoftmaxAlpha, noise_seed);
            let pg = hessian_penalty_gradient(&obj, alpha.as_slice(), &directions, fd_step)?;
            for (g, p) in grad.iter_mut().zip(pg) {
                *g += penalty_coef * p;
            }
        }
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(SearchError::NonFinite {
            what: "architecture gradient",
        });
    }
    adam.step(alpha.as_mut_slice(), &grad);
    if !alpha.is_finite() {
        return Err(SearchError::NonFinite {
            what: "architecture update",
        });
    }
    Ok(eval.loss)
}

/// One SGD step on the training loss w.r.t. the network weights, with
/// mixture weights `softmax(alpha) + delta`. Returns the batch loss.
#[allow(clippy::too_many_arguments)]
pub fn weight_step(
    net: &Supernet,
    state: &mut SupernetState,
    alpha: &ArchWeights,
    delta: Option<&[f64]>,
    train_batch: &Samples,
    sgd: &mut Sgd,
    lr: f64,
    noise_seed: u64,
) -> Result<f64, SearchError> {
    let eval = net.evaluate(
        state,
        Mixing::Alpha { alpha, delta },
        train_batch,
        noise_seed,
        GradRequest::WEIGHTS,
    )?;
    let grads = eval.weight_grads.expect("requested weight gradients");
    if grads.iter().any(|g| !g.all_finite()) {
        return Err(SearchError::NonFinite { what: "weight gradient" });
    }
    sgd.step(&mut state.tensors, &grads, lr);
    if !state.is_finite() {
        return Err(SearchError::NonFinite { what: "weight update" });
    }
    Ok(eval.loss)
}

// Independent streams keep e.g. DARTS and zero-radius RS on identical draws.
const STREAM_INIT: u64 = 0;
const STREAM_SHUFFLE: u64 = 1;
const STREAM_NOISE: u64 = 2;
const STREAM_PERTURB: u64 = 3;
const STREAM_PROBE: u64 = 1 << 32;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn batches(order: &[usize], size: usize) -> Vec<&[usize]> {
    order.chunks(size).collect()
}

struct EpochStats {
    train_loss: f64,
}

/// Runs the alternating search on `data.train` / `data.val`.
///
/// Errors are returned only for invalid inputs; numerical failures during
/// training end the run early with the reason in the final record.
pub fn run_search(
    net: &Supernet,
    data: &DatasetSplit,
    config: &SearchConfig,
    oracle: Option<&dyn TestErrorOracle>,
) -> Result<SearchOutcome, SearchError> {
    run_search_observed(net, data, config, oracle, &mut |_| Ok(()))
}

/// Intermediate point of a search, handed to the observer after every epoch.
pub struct EpochView<'a> {
    pub epoch: usize,
    pub record: &'a TrajectoryRecord,
    pub state: &'a SupernetState,
    pub alpha: &'a ArchWeights,
}

/// [`run_search`] calling `observer` after each completed epoch. An observer
/// error is returned as is; it does not become an abort record.
pub fn run_search_observed(
    net: &Supernet,
    data: &DatasetSplit,
    config: &SearchConfig,
    oracle: Option<&dyn TestErrorOracle>,
    observer: &mut dyn FnMut(&EpochView<'_>) -> Result<(), SearchError>,
) -> Result<SearchOutcome, SearchError> {
    config.validate()?;
    let schedule = config.schedule()?;
    if data.num_features() != net.in_features() {
        return Err(SearchError::InvalidConfig(format!(
            "dataset has {} features, network expects {}",
            data.num_features(),
            net.in_features()
        )));
    }
    if data.train.is_empty() || data.val.is_empty() {
        return Err(SearchError::InvalidConfig("train and validation splits must be non-empty".into()));
    }
    let space = net.space().clone();
    let mut init = stream(config.seed, STREAM_INIT);
    let mut state = net.init_state(&mut init);
    let mut alpha = ArchWeights::init(&space, &mut init);
    let mut shuffle = stream(config.seed, STREAM_SHUFFLE);
    let mut noise = stream(config.seed, STREAM_NOISE);
    let mut perturb = stream(config.seed, STREAM_PERTURB);

    let mut sgd = Sgd::new(config.weight_optim);
    let mut adam = Adam::new(config.arch_optim, space.arch_dim());
    let probe_set = data.val.head(config.probe_subset);
    let mut train_order: Vec<usize> = (0..data.train.len()).collect();
    let mut val_order: Vec<usize> = (0..data.val.len()).collect();
    let started = Instant::now();
    let mut records = Vec::with_capacity(config.epochs);
    let mut aborted = None;

    for epoch in 0..config.epochs {
        // radius actually applied to the weight step
        let epsilon = match config.perturbation {
            PerturbationKind::Rs | PerturbationKind::Adv { .. } => epsilon_at(epoch, &schedule)?,
            PerturbationKind::None | PerturbationKind::Hessreg { .. } => 0.0,
        };
        let lr = config.weight_optim.lr_at(epoch, config.epochs);
        train_order.shuffle(&mut shuffle);
        val_order.shuffle(&mut shuffle);

        let step = |state: &mut SupernetState,
                    alpha: &mut ArchWeights,
                    sgd: &mut Sgd,
                    adam: &mut Adam,
                    noise: &mut ChaCha8Rng,
                    perturb: &mut ChaCha8Rng|
         -> Result<EpochStats, SearchError> {
            let train_batches = batches(&train_order, config.batch_size);
            let val_batches = batches(&val_order, config.batch_size);
            let mut total = 0.0;
            for b in 0..train_batches.len().max(val_batches.len()) {
                if let Some(idx) = val_batches.get(b) {
                    let batch = data.val.select(idx);
                    let seed = noise.next_u64();
                    arch_step(net, state, alpha, adam, &batch, &config.perturbation, seed, perturb)?;
                }
                if let Some(idx) = train_batches.get(b) {
                    let batch = data.train.select(idx);
                    let seed = noise.next_u64();
                    let delta = match config.perturbation {
                        PerturbationKind::Rs => Some(sample_rs_delta(epsilon, space.arch_dim(), perturb)),
                        PerturbationKind::Adv { .. } => {
                            let settings =
                                PgdSettings::from_kind(&config.perturbation, epsilon).expect("adversarial kind");
                            Some(pgd_delta(net, state, alpha, &batch, seed, &settings, perturb)?)
                        }
                        PerturbationKind::None | PerturbationKind::Hessreg { .. } => None,
                    };
                    total += weight_step(net, state, alpha, delta.as_deref(), &batch, sgd, lr, seed)?;
                }
            }
            Ok(EpochStats {
                train_loss: total / train_batches.len() as f64,
            })
        };
        let stats = match step(&mut state, &mut alpha, &mut sgd, &mut adam, &mut noise, &mut perturb) {
            Ok(s) => s,
            Err(e) => {
                aborted = Some(format!("epoch {epoch}: {e}"));
                break;
            }
        };

        let measured = (|| -> Result<TrajectoryRecord, SearchError> {
            let val = net.forward(
                &state,
                Mixing::Alpha {
                    alpha: &alpha,
                    delta: None,
                },
                &data.val,
                config.probe_noise_seed,
            )?;
            if !val.loss.is_finite() {
                return Err(SearchError::NonFinite { what: "validation loss" });
            }
            let (lambda, trace) = if config.probe_due(epoch) {
                let obj =
                    ValidationObjective::new(net, &state, &probe_set, config.probe.basis, config.probe_noise_seed);
                let point = obj.base_point(&alpha);
                let mut rng = stream(config.seed, STREAM_PROBE + epoch as u64);
                let probe = probe_hessian(&obj, &point, &config.probe, &mut rng)?;
                (Some(probe.lambda_max), probe.trace_estimate)
            } else {
                (None, None)
            };
            let arch = discretize(&alpha);
            Ok(TrajectoryRecord {
                epoch,
                train_loss: stats.train_loss,
                val_loss: val.loss,
                val_accuracy: val.accuracy(&data.val.labels),
                epsilon,
                lambda_max_estimate: lambda,
                trace_estimate: trace,
                discrete_arch: arch.listing(&space),
                param_free_proportion: param_free_proportion(&space, &arch),
                oracle_test_error: oracle.and_then(|o| o.test_error(&arch)),
                wall_seconds: config.record_wall_time.then(|| started.elapsed().as_secs_f64()),
            })
        })();
        match measured {
            Ok(r) => {
                observer(&EpochView {
                    epoch,
                    record: &r,
                    state: &state,
                    alpha: &alpha,
                })?;
                records.push(r);
            }
            Err(e) => {
                aborted = Some(format!("epoch {epoch}: {e}"));
                break;
            }
        }
    }

    let final_arch = discretize(&alpha);
    let final_record = FinalRecord {
        kind: "final".into(),
        method: config.perturbation.method_name().into(),
        seed: config.seed,
        encoding: final_arch.encoding(),
        discrete_arch: final_arch.listing(&space),
        alpha: alpha.as_slice().to_vec(),
        aborted,
    };
    Ok(SearchOutcome {
        trajectory: Trajectory { records, final_record },
        final_arch,
        alpha,
        state,
    })
}
