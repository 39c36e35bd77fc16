use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, LandscapeSettings};
use super::{read_file, write_file, HarnessError};
use crate::analysis::{landscape_scan, probe_hessian, HessianProbe, LandscapeGrid, ValidationObjective};
use crate::data::{generate_dataset, load_csv_dataset, DatasetSpec, DatasetSplit};
use crate::minibench::{build_table, fingerprint, BenchTable};
use crate::search::{run_search_observed, SearchOutcome, TestErrorOracle, Trajectory};
use crate::supernet::{param_free_proportion, ArchWeights, CellSpace, DiscreteArch, Supernet, SupernetState};

/// Environment variable holding the worker count; unset means sequential.
pub const WORKERS_ENV: &str = "PERTURBNAS_WORKERS";

// far away from the streams used inside a search
const STREAM_LANDSCAPE: u64 = 1 << 40;
const STREAM_PROBE: u64 = 1 << 41;

pub fn workers_from_env() -> Result<usize, HarnessError> {
    match std::env::var(WORKERS_ENV) {
        Err(_) => Ok(1),
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map(|n| n.max(1))
            .map_err(|_| HarnessError::Config(format!("{WORKERS_ENV} must be a non-negative integer, got `{v}`"))),
    }
}

/// Runs `f` over `jobs` on up to `workers` threads, keeping input order.
pub(crate) fn fan_out<J: Sync, T: Send>(
    jobs: &[J],
    workers: usize,
    f: impl Fn(&J) -> Result<T, HarnessError> + Sync + Send,
) -> Result<Vec<T>, HarnessError> {
    if workers <= 1 || jobs.len() <= 1 {
        return jobs.iter().map(f).collect();
    }
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| HarnessError::Config(format!("thread pool: {e}")))?;
    pool.install(|| jobs.par_iter().map(f).collect())
}

pub fn load_dataset(config: &ExperimentConfig) -> Result<DatasetSplit, HarnessError> {
    Ok(match &config.dataset {
        DatasetSpec::Csv { path, label_column } => {
            load_csv_dataset(Path::new(path), label_column, &config.split, config.data_seed)?
        }
        spec => generate_dataset(spec, &config.split, config.data_seed)?,
    })
}

fn supernet_for(config: &ExperimentConfig, data: &DatasetSplit) -> Result<Supernet, HarnessError> {
    Ok(Supernet::new(config.space.clone(), data.num_features(), data.num_classes)?)
}

/// Reads the configured bench table, refusing one built for another setup.
pub fn load_bench_table(
    config: &ExperimentConfig,
    net: &Supernet,
    data: &DatasetSplit,
) -> Result<Option<BenchTable>, HarnessError> {
    let Some(path) = &config.bench.table else {
        return Ok(None);
    };
    let table = BenchTable::from_csv(net.space(), &read_file(path)?).map_err(|e| HarnessError::parse(path, e))?;
    table.check(&fingerprint(net, &config.bench.recipe, data))?;
    Ok(Some(table))
}

pub fn build_bench(config: &ExperimentConfig, workers: usize) -> Result<BenchTable, HarnessError> {
    let data = load_dataset(config)?;
    let net = supernet_for(config, &data)?;
    Ok(build_table(&net, &data, &config.bench.recipe, workers, config.bench.cap)?)
}

/// Network weights and architecture logits at some epoch of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub method: String,
    pub seed: u64,
    /// Last completed epoch.
    pub epoch: usize,
    pub space: CellSpace,
    pub in_features: usize,
    pub num_classes: usize,
    pub alpha: Vec<f64>,
    pub state: SupernetState,
}

impl Checkpoint {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string(self).expect("checkpoint serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn save(&self, path: &Path) -> Result<(), HarnessError> {
        write_file(path, &self.to_json())
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        Self::from_json(&read_file(path)?).map_err(|e| HarnessError::parse(path, e))
    }

    /// Network, weights and logits, checked against each other.
    pub fn restore(&self) -> Result<(Supernet, SupernetState, ArchWeights), HarnessError> {
        let net = Supernet::new(self.space.clone(), self.in_features, self.num_classes)?;
        net.check_state(&self.state)?;
        let alpha = ArchWeights::from_flat(&self.space, self.alpha.clone())?;
        Ok((net, self.state.clone(), alpha))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinalArch {
    pub encoding: String,
    pub discrete_arch: Vec<((usize, usize), String)>,
    pub param_free_proportion: f64,
}

impl FinalArch {
    pub fn new(space: &CellSpace, arch: &DiscreteArch) -> Self {
        Self {
            encoding: arch.encoding(),
            discrete_arch: arch.listing(space),
            param_free_proportion: param_free_proportion(space, arch),
        }
    }
}

/// What one (method, seed) run left on disk.
#[derive(Clone, Debug)]
pub struct RunSummary {
    pub method: String,
    pub seed: u64,
    pub dir: PathBuf,
    pub outcome: SearchOutcome,
}

impl RunSummary {
    pub fn aborted(&self) -> Option<&str> {
        self.outcome.aborted()
    }

    /// The last recorded Hessian probe.
    pub fn final_lambda_max(&self) -> Option<f64> {
        self.outcome.trajectory.records.iter().rev().find_map(|r| r.lambda_max_estimate)
    }
}

#[derive(Clone, Debug)]
pub struct ExperimentSummary {
    pub runs: Vec<RunSummary>,
}

impl ExperimentSummary {
    pub fn aborted(&self) -> Vec<String> {
        self.runs
            .iter()
            .filter_map(|r| r.aborted().map(|why| format!("{} seed {}: {why}", r.method, r.seed)))
            .collect()
    }
}

fn scan(
    net: &Supernet,
    state: &SupernetState,
    alpha: &ArchWeights,
    data: &DatasetSplit,
    settings: &LandscapeSettings,
    noise_seed: u64,
    rng_seed: u64,
    epoch: usize,
) -> Result<LandscapeGrid, HarnessError> {
    let samples = data.val.head(settings.subset);
    let obj = ValidationObjective::new(net, state, &samples, settings.basis, noise_seed);
    let point = obj.base_point(alpha);
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    rng.set_stream(STREAM_LANDSCAPE + epoch as u64);
    Ok(landscape_scan(&obj, &point, settings.radius, settings.grid_n, settings.basis, &mut rng)?)
}

fn write_landscape(dir: &Path, epoch: usize, grid: &LandscapeGrid) -> Result<(), HarnessError> {
    let stem = format!("landscape_epoch_{epoch:03}");
    write_file(&dir.join(format!("{stem}.csv")), &grid.to_csv())?;
    let meta = serde_json::to_string_pretty(&grid.meta()).expect("meta serializes") + "\n";
    write_file(&dir.join(format!("{stem}.json")), &meta)
}

/// Landscape around a checkpoint, on the configured validation subset.
pub fn scan_checkpoint(
    config: &ExperimentConfig,
    checkpoint: &Checkpoint,
    data: &DatasetSplit,
) -> Result<LandscapeGrid, HarnessError> {
    let (net, state, alpha) = checkpoint.restore()?;
    scan(
        &net,
        &state,
        &alpha,
        data,
        &config.landscape,
        config.search.probe_noise_seed,
        checkpoint.seed,
        checkpoint.epoch,
    )
}

/// Hessian probe at a checkpoint with the configured probe settings.
pub fn probe_checkpoint(
    config: &ExperimentConfig,
    checkpoint: &Checkpoint,
    data: &DatasetSplit,
) -> Result<HessianProbe, HarnessError> {
    let (net, state, alpha) = checkpoint.restore()?;
    let samples = data.val.head(config.search.probe_subset);
    let obj = ValidationObjective::new(&net, &state, &samples, config.search.probe.basis, config.search.probe_noise_seed);
    let point = obj.base_point(&alpha);
    let mut rng = ChaCha8Rng::seed_from_u64(checkpoint.seed);
    rng.set_stream(STREAM_PROBE + checkpoint.epoch as u64);
    Ok(probe_hessian(&obj, &point, &config.search.probe, &mut rng)?)
}

/// One search run; writes `trajectory.jsonl`, `final_arch.json`,
/// `checkpoint.json` and, if enabled, first/last-epoch landscapes to its run
/// directory. An aborted search still writes its files.
pub fn run_single(
    config: &ExperimentConfig,
    data: &DatasetSplit,
    oracle: Option<&dyn TestErrorOracle>,
    method: &str,
    seed: u64,
) -> Result<RunSummary, HarnessError> {
    let net = supernet_for(config, data)?;
    let search = config.search_config(method, seed)?;
    let dir = config.run_dir(method, seed);
    std::fs::create_dir_all(&dir).map_err(|e| HarnessError::io(&dir, e))?;
    let last = search.epochs - 1;
    let mut landscape_error = None;
    let outcome = run_search_observed(&net, data, &search, oracle, &mut |view| {
        if config.landscape.enabled && (view.epoch == 0 || view.epoch == last) {
            let written = scan(
                &net,
                view.state,
                view.alpha,
                data,
                &config.landscape,
                search.probe_noise_seed,
                seed,
                view.epoch,
            )
            .and_then(|grid| write_landscape(&dir, view.epoch, &grid));
            if let Err(e) = written {
                landscape_error = Some(e);
                return Err(crate::search::SearchError::InvalidConfig("landscape scan failed".into()));
            }
        }
        Ok(())
    });
    if let Some(e) = landscape_error {
        return Err(e);
    }
    let outcome = outcome?;
    let space = net.space();
    write_file(&dir.join("trajectory.jsonl"), &outcome.trajectory.to_jsonl())?;
    let arch = serde_json::to_string_pretty(&FinalArch::new(space, &outcome.final_arch)).expect("arch serializes");
    write_file(&dir.join("final_arch.json"), &(arch + "\n"))?;
    Checkpoint {
        method: method.to_string(),
        seed,
        epoch: outcome.trajectory.records.len().saturating_sub(1),
        space: space.clone(),
        in_features: net.in_features(),
        num_classes: net.num_classes(),
        alpha: outcome.alpha.as_slice().to_vec(),
        state: outcome.state.clone(),
    }
    .save(&dir.join("checkpoint.json"))?;
    Ok(RunSummary {
        method: method.to_string(),
        seed,
        dir,
        outcome,
    })
}

/// Runs `method` for every configured seed. Errors with
/// [`HarnessError::Aborted`] after writing all runs if any of them aborted.
pub fn run_experiment(config: &ExperimentConfig, workers: usize) -> Result<ExperimentSummary, HarnessError> {
    let summary = run_methods(config, std::slice::from_ref(&config.method), workers)?;
    let aborted = summary.aborted();
    if aborted.is_empty() {
        Ok(summary)
    } else {
        Err(HarnessError::Aborted(aborted))
    }
}

pub(crate) fn run_methods(
    config: &ExperimentConfig,
    methods: &[String],
    workers: usize,
) -> Result<ExperimentSummary, HarnessError> {
    config.validate()?;
    let data = load_dataset(config)?;
    let net = supernet_for(config, &data)?;
    let table = load_bench_table(config, &net, &data)?;
    write_file(&config.output_dir.join("config.toml"), &config.to_toml())?;
    let jobs: Vec<(String, u64)> = methods
        .iter()
        .flat_map(|m| config.seeds.iter().map(move |&s| (m.clone(), s)))
        .collect();
    let oracle = table.as_ref().map(|t| t as &(dyn TestErrorOracle + Sync));
    let runs = fan_out(&jobs, workers, |(m, s)| {
        run_single(config, &data, oracle.map(|o| o as &dyn TestErrorOracle), m, *s)
    })?;
    Ok(ExperimentSummary { runs })
}

/// Reloads a run directory's trajectory.
pub fn load_trajectory(dir: &Path) -> Result<Trajectory, HarnessError> {
    let path = dir.join("trajectory.jsonl");
    Trajectory::from_jsonl(&read_file(&path)?).map_err(|e| HarnessError::parse(&path, e))
}
