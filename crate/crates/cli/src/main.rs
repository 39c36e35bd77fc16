use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use perturbnas::harness::{
    build_bench, compare_methods, load_bench_table, load_dataset, probe_checkpoint, run_experiment, scan_checkpoint,
    workers_from_env, Checkpoint, ExperimentConfig, HarnessError, Overrides,
};
use perturbnas::minibench::{fingerprint, BenchTable};
use perturbnas::supernet::{DiscreteArch, Supernet};

mod keys;

#[derive(Parser)]
#[command(
    name = "perturbnas",
    version,
    about = "Differentiable architecture search with perturbation-based stabilizers",
    after_long_help = keys::CONFIG_KEYS
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Search with `method` for every seed; writes <output_dir>/<method>/seed_<s>/.
    #[command(after_long_help = keys::CONFIG_KEYS)]
    Search {
        #[command(flatten)]
        common: Common,
    },
    /// Search with every method and seed, then write comparison.csv and summary.txt.
    #[command(after_long_help = keys::CONFIG_KEYS)]
    Compare {
        #[command(flatten)]
        common: Common,
    },
    /// Exhaustive tabular benchmark of the configured cell space.
    Bench {
        #[command(subcommand)]
        command: BenchCommand,
    },
    /// Loss/accuracy scan around a checkpoint's architecture.
    Landscape {
        #[command(flatten)]
        source: CheckpointArgs,
        /// Overrides landscape.radius.
        #[arg(long)]
        radius: Option<f64>,
        /// Overrides landscape.grid_n (odd).
        #[arg(long)]
        grid_n: Option<usize>,
        /// Output directory (default: the checkpoint's directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Largest Hessian eigenvalue and trace estimate at a checkpoint; prints JSON.
    Hessian {
        #[command(flatten)]
        source: CheckpointArgs,
        /// Also write the JSON to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the effective configuration (after overrides) as TOML.
    Config {
        /// Config file; the built-in default experiment if absent.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        overrides: OverrideArgs,
    },
}

#[derive(Subcommand)]
enum BenchCommand {
    /// Train every architecture and write the table as CSV.
    Build {
        /// Config file; the built-in default experiment if absent.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Table path (default: <output_dir>/bench.csv).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Look up one architecture, e.g. `--arch 0-3-1` (op index per edge).
    Query {
        /// Config the table was built from; the built-in default if absent.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Table path (default: bench.table from the config).
        #[arg(long)]
        table: Option<PathBuf>,
        #[arg(long)]
        arch: String,
    },
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML); see the key reference below.
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    overrides: OverrideArgs,
}

#[derive(Args, Default)]
struct OverrideArgs {
    /// Run this single seed instead of `seeds`.
    #[arg(long)]
    seed: Option<u64>,
    /// Use only this method (sets `method` and `methods`).
    #[arg(long, value_parser = ["darts", "rs", "adv", "hessreg"])]
    method: Option<String>,
    /// Overrides search.eps_start.
    #[arg(long)]
    eps_start: Option<f64>,
    /// Overrides search.eps_end.
    #[arg(long)]
    eps_end: Option<f64>,
    /// Overrides adv.steps.
    #[arg(long)]
    pgd_steps: Option<usize>,
    /// Overrides adv.step_size.
    #[arg(long)]
    pgd_lr: Option<f64>,
    /// Overrides output_dir.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl OverrideArgs {
    fn to_overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            method: self.method.clone(),
            eps_start: self.eps_start,
            eps_end: self.eps_end,
            pgd_steps: self.pgd_steps,
            pgd_lr: self.pgd_lr,
            out: self.out.clone(),
        }
    }
}

#[derive(Args)]
struct CheckpointArgs {
    /// checkpoint.json written by `search` or `compare`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Config of the run (for the dataset and probe settings); the built-in default if absent.
    #[arg(long)]
    config: Option<PathBuf>,
}

fn load_config(path: Option<&Path>, overrides: &OverrideArgs) -> Result<ExperimentConfig, HarnessError> {
    let mut config = match path {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    config.apply(&overrides.to_overrides())?;
    Ok(config)
}

enum Outcome {
    Done,
    Aborted,
}

fn run(cli: Cli) -> Result<Outcome, HarnessError> {
    let workers = workers_from_env()?;
    match cli.command {
        Command::Search { common } => {
            let config = load_config(Some(&common.config), &common.overrides)?;
            match run_experiment(&config, workers) {
                Ok(summary) => {
                    for r in &summary.runs {
                        println!(
                            "{} seed {}: {} (lambda_max {}) -> {}",
                            r.method,
                            r.seed,
                            r.outcome.final_arch.encoding(),
                            r.final_lambda_max().map_or("n/a".into(), |v| format!("{v:.4}")),
                            r.dir.display()
                        );
                    }
                    Ok(Outcome::Done)
                }
                Err(HarnessError::Aborted(runs)) => {
                    for r in runs {
                        eprintln!("aborted: {r}");
                    }
                    Ok(Outcome::Aborted)
                }
                Err(e) => Err(e),
            }
        }
        Command::Compare { common } => {
            let config = load_config(Some(&common.config), &common.overrides)?;
            let report = compare_methods(&config, &config.methods, workers)?;
            print!("{}", report.summary_text());
            Ok(if report.aborted().is_empty() {
                Outcome::Done
            } else {
                Outcome::Aborted
            })
        }
        Command::Bench { command } => match command {
            BenchCommand::Build { config, out } => {
                let config = load_config(config.as_deref(), &OverrideArgs::default())?;
                let table = build_bench(&config, workers)?;
                let path = out.unwrap_or_else(|| config.output_dir.join("bench.csv"));
                write(&path, &table.to_csv())?;
                let diverged = table.rows.iter().filter(|(_, r)| r.diverged).count();
                println!("{} architectures ({} diverged) -> {}", table.len(), diverged, path.display());
                Ok(Outcome::Done)
            }
            BenchCommand::Query { config, table, arch } => {
                let mut config = load_config(config.as_deref(), &OverrideArgs::default())?;
                if let Some(t) = table {
                    config.bench.table = Some(t);
                }
                if config.bench.table.is_none() {
                    return Err(HarnessError::Config("no table given (--table or bench.table)".into()));
                }
                let data = load_dataset(&config)?;
                let net = Supernet::new(config.space.clone(), data.num_features(), data.num_classes)?;
                let table: BenchTable = load_bench_table(&config, &net, &data)?.expect("table path set");
                let arch = DiscreteArch::parse_encoding(net.space(), &arch)?;
                let row = table.query(&fingerprint(&net, &config.bench.recipe, &data), &arch)?;
                let value = serde_json::json!({
                    "encoding": arch.encoding(),
                    "discrete_arch": arch.listing(net.space()),
                    "val_error": row.val_error,
                    "test_error": row.test_error,
                    "param_count": row.param_count,
                    "diverged": row.diverged,
                });
                println!("{value}");
                Ok(Outcome::Done)
            }
        },
        Command::Landscape {
            source,
            radius,
            grid_n,
            out,
        } => {
            let mut config = load_config(source.config.as_deref(), &OverrideArgs::default())?;
            if let Some(r) = radius {
                config.landscape.radius = r;
            }
            if let Some(n) = grid_n {
                config.landscape.grid_n = n;
            }
            config.validate()?;
            let checkpoint = Checkpoint::load(&source.checkpoint)?;
            let data = load_dataset(&config)?;
            let grid = scan_checkpoint(&config, &checkpoint, &data)?;
            let dir = out.unwrap_or_else(|| source.checkpoint.parent().unwrap_or(Path::new(".")).to_path_buf());
            let stem = format!("landscape_epoch_{:03}", checkpoint.epoch);
            write(&dir.join(format!("{stem}.csv")), &grid.to_csv())?;
            let meta = serde_json::to_string_pretty(&grid.meta()).expect("meta serializes") + "\n";
            write(&dir.join(format!("{stem}.json")), &meta)?;
            println!(
                "max accuracy drop {} -> {}",
                grid.max_accuracy_drop().map_or("n/a".into(), |v| format!("{v:.4}")),
                dir.join(format!("{stem}.csv")).display()
            );
            Ok(Outcome::Done)
        }
        Command::Hessian { source, out } => {
            let config = load_config(source.config.as_deref(), &OverrideArgs::default())?;
            let checkpoint = Checkpoint::load(&source.checkpoint)?;
            let data = load_dataset(&config)?;
            let probe = probe_checkpoint(&config, &checkpoint, &data)?;
            let json = serde_json::to_string(&probe).expect("probe serializes");
            println!("{json}");
            if let Some(p) = out {
                write(&p, &(json + "\n"))?;
            }
            Ok(Outcome::Done)
        }
        Command::Config { config, overrides } => {
            print!("{}", load_config(config.as_deref(), &overrides)?.to_toml());
            Ok(Outcome::Done)
        }
    }
}

fn write(path: &Path, contents: &str) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::Io {
            path: dir.to_path_buf(),
            message: e.to_string(),
        })?;
    }
    std::fs::write(path, contents).map_err(|e| HarnessError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::Aborted) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
