use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::experiment::{fan_out, load_bench_table, load_dataset, run_methods};
use super::{write_file, HarnessError};
use crate::minibench::train_discrete;
use crate::supernet::Supernet;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub method: String,
    pub seed: u64,
    pub encoding: String,
    pub final_test_error: f64,
    pub final_lambda_max: Option<f64>,
    pub param_free_proportion: f64,
    pub aborted: bool,
}

/// Mean and sample standard deviation (0 for a single value).
fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Some((mean, 0.0));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Some((mean, var.sqrt()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct MethodSummary {
    pub method: String,
    pub seeds: usize,
    pub test_error: Option<(f64, f64)>,
    pub lambda_max: Option<(f64, f64)>,
    pub param_free_proportion: Option<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonReport {
    /// Method-major, in the declared method and seed order.
    pub rows: Vec<ComparisonRow>,
}

const HEADER: &str = "method,seed,encoding,final_test_error,final_lambda_max,param_free_proportion,aborted";

impl ComparisonReport {
    pub fn methods(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.method.as_str()) {
                out.push(&r.method);
            }
        }
        out
    }

    pub fn summary(&self) -> Vec<MethodSummary> {
        self.methods()
            .into_iter()
            .map(|m| {
                let rows: Vec<&ComparisonRow> = self.rows.iter().filter(|r| r.method == m).collect();
                let collect = |f: &dyn Fn(&ComparisonRow) -> Option<f64>| {
                    mean_std(&rows.iter().filter_map(|r| f(r)).collect::<Vec<_>>())
                };
                MethodSummary {
                    method: m.to_string(),
                    seeds: rows.len(),
                    test_error: collect(&|r| Some(r.final_test_error)),
                    lambda_max: collect(&|r| r.final_lambda_max),
                    param_free_proportion: collect(&|r| Some(r.param_free_proportion)),
                }
            })
            .collect()
    }

    pub fn aborted(&self) -> Vec<String> {
        self.rows
            .iter()
            .filter(|r| r.aborted)
            .map(|r| format!("{} seed {}", r.method, r.seed))
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(HEADER);
        out.push('\n');
        for r in &self.rows {
            let lambda = r.final_lambda_max.map(|v| format!("{v:?}")).unwrap_or_default();
            writeln!(
                out,
                "{},{},{},{:?},{},{:?},{}",
                r.method, r.seed, r.encoding, r.final_test_error, lambda, r.param_free_proportion, r.aborted
            )
            .unwrap();
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, String> {
        let mut lines = text.lines();
        if lines.next() != Some(HEADER) {
            return Err(format!("expected header `{HEADER}`"));
        }
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.is_empty()) {
            let bad = |what: &str| format!("row {}: bad {what}", i + 1);
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return Err(format!("row {}: expected 7 fields, got {}", i + 1, f.len()));
            }
            rows.push(ComparisonRow {
                method: f[0].to_string(),
                seed: f[1].parse().map_err(|_| bad("seed"))?,
                encoding: f[2].to_string(),
                final_test_error: f[3].parse().map_err(|_| bad("final_test_error"))?,
                final_lambda_max: match f[4] {
                    "" => None,
                    v => Some(v.parse().map_err(|_| bad("final_lambda_max"))?),
                },
                param_free_proportion: f[5].parse().map_err(|_| bad("param_free_proportion"))?,
                aborted: f[6].parse().map_err(|_| bad("aborted"))?,
            });
        }
        Ok(Self { rows })
    }

    /// Fixed-width `mean ± std` table, one line per method.
    pub fn summary_text(&self) -> String {
        let cell = |v: Option<(f64, f64)>| match v {
            Some((m, s)) => format!("{m:.4} ± {s:.4}"),
            None => "n/a".to_string(),
        };
        let mut out = format!(
            "{:<8} {:>5}  {:<17}  {:<17}  {:<17}\n",
            "method", "seeds", "test_error", "lambda_max", "param_free"
        );
        for s in self.summary() {
            writeln!(
                out,
                "{:<8} {:>5}  {:<17}  {:<17}  {:<17}",
                s.method,
                s.seeds,
                cell(s.test_error),
                cell(s.lambda_max),
                cell(s.param_free_proportion)
            )
            .unwrap();
        }
        let aborted = self.aborted();
        if !aborted.is_empty() {
            writeln!(out, "aborted: {}", aborted.join(", ")).unwrap();
        }
        out
    }
}

/// Runs every (method, seed) pair and writes `comparison.csv` and
/// `summary.txt` to the output directory.
///
/// Final test error comes from the configured bench table, or else from
/// training the final architecture with the bench recipe.
pub fn compare_methods(
    config: &ExperimentConfig,
    methods: &[String],
    workers: usize,
) -> Result<ComparisonReport, HarnessError> {
    let runs = run_methods(config, methods, workers)?.runs;
    let data = load_dataset(config)?;
    let net = Supernet::new(config.space.clone(), data.num_features(), data.num_classes)?;
    let table = load_bench_table(config, &net, &data)?;
    let rows = fan_out(&runs, workers, |run| {
        let arch = &run.outcome.final_arch;
        let test_error = match &table {
            Some(t) => t.query(&t.fingerprint, arch)?.test_error,
            None => train_discrete(&net, arch, &data, &config.bench.recipe)?.test_error,
        };
        Ok(ComparisonRow {
            method: run.method.clone(),
            seed: run.seed,
            encoding: arch.encoding(),
            final_test_error: test_error,
            final_lambda_max: run.final_lambda_max(),
            param_free_proportion: crate::supernet::param_free_proportion(net.space(), arch),
            aborted: run.aborted().is_some(),
        })
    })?;
    let report = ComparisonReport { rows };
    write_file(&config.output_dir.join("comparison.csv"), &report.to_csv())?;
    write_file(&config.output_dir.join("summary.txt"), &report.summary_text())?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_std_matches_hand_values() {
        assert_eq!(mean_std(&[]), None);
        assert_eq!(mean_std(&[2.0]), Some((2.0, 0.0)));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn csv_round_trip() {
        let report = ComparisonReport {
            rows: vec![
                ComparisonRow {
                    method: "darts".into(),
                    seed: 3,
                    encoding: "0-3-1".into(),
                    final_test_error: 0.1 + 0.2,
                    final_lambda_max: Some(1.0 / 3.0),
                    param_free_proportion: 2.0 / 3.0,
                    aborted: false,
                },
                ComparisonRow {
                    method: "adv".into(),
                    seed: 0,
                    encoding: "1-1-1".into(),
                    final_test_error: 0.5,
                    final_lambda_max: None,
                    param_free_proportion: 1.0,
                    aborted: true,
                },
            ],
        };
        let back = ComparisonReport::from_csv(&report.to_csv()).unwrap();
        assert_eq!(back, report);
        assert_eq!(report.methods(), vec!["darts", "adv"]);
        assert!(report.summary_text().contains("aborted: adv seed 0"));
        assert!(ComparisonReport::from_csv("nope\n").is_err());
    }
}
