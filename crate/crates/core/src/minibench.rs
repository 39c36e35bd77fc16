//! Exhaustively trained lookup table over a small discrete cell space.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::data::DatasetSplit;
use crate::search::{Sgd, SgdConfig, TestErrorOracle, Trajectory};
use crate::supernet::{accuracy, instantiate_discrete, CellSpace, DiscreteArch, Supernet, SupernetError};

pub const DEFAULT_ENUMERATION_CAP: usize = 1024;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BenchError {
    #[error("space has {required} architectures, more than the cap of {cap}")]
    TooLarge { required: String, cap: usize },
    #[error("bench table fingerprint {found} does not match the querying space ({expected})")]
    Fingerprint { expected: String, found: String },
    #[error("architecture `{0}` is not in the table")]
    Missing(String),
    #[error("bench table parse error: {0}")]
    Parse(String),
    #[error("invalid training recipe: {0}")]
    InvalidRecipe(String),
    #[error(transparent)]
    Supernet(#[from] SupernetError),
}

/// Every architecture of the space, last edge varying fastest.
pub fn enumerate_space(space: &CellSpace, cap: usize) -> Result<Vec<DiscreteArch>, BenchError> {
    let k = space.num_ops();
    let e = space.num_edges();
    let count = space.num_architectures().filter(|&n| n <= cap).ok_or_else(|| BenchError::TooLarge {
        required: match space.num_architectures() {
            Some(n) => n.to_string(),
            None => format!("{k}^{e}"),
        },
        cap,
    })?;
    let mut out = Vec::with_capacity(count);
    let mut ops = vec![0usize; e];
    for _ in 0..count {
        out.push(DiscreteArch::new(space, ops.clone())?);
        for slot in (0..e).rev() {
            ops[slot] += 1;
            if ops[slot] < k {
                break;
            }
            ops[slot] = 0;
        }
    }
    Ok(out)
}

/// Fixed-budget training applied to every architecture.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainRecipe {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: SgdConfig,
    pub seeds_per_arch: usize,
    pub global_seed: u64,
    /// Record wall-clock training time; off keeps tables byte-reproducible.
    pub record_time: bool,
}

impl Default for TrainRecipe {
    fn default() -> Self {
        Self {
            epochs: 80,
            batch_size: 32,
            optimizer: SgdConfig {
                lr_max: 0.05,
                ..SgdConfig::default()
            },
            seeds_per_arch: 3,
            global_seed: 0,
            record_time: false,
        }
    }
}

impl TrainRecipe {
    fn validate(&self) -> Result<(), BenchError> {
        if self.epochs == 0 || self.batch_size == 0 || self.seeds_per_arch == 0 {
            return Err(BenchError::InvalidRecipe(
                "epochs, batch_size and seeds_per_arch must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Training seed of the `run`-th repetition of `arch`.
    pub fn arch_seed(&self, arch: &DiscreteArch, run: usize) -> u64 {
        let mut h = Sha256::new();
        h.update(self.global_seed.to_le_bytes());
        h.update(arch.encoding().as_bytes());
        h.update((run as u64).to_le_bytes());
        let digest = h.finalize();
        u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
    }
}

/// Hash of everything that determines a table's contents.
pub fn fingerprint(net: &Supernet, recipe: &TrainRecipe, data: &DatasetSplit) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(net.space()).expect("space serializes"));
    h.update((net.in_features() as u64).to_le_bytes());
    h.update((net.num_classes() as u64).to_le_bytes());
    let mut recipe = *recipe;
    recipe.record_time = false;
    h.update(serde_json::to_vec(&recipe).expect("recipe serializes"));
    h.update(data.content_hash().as_bytes());
    hex::encode(h.finalize())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub val_error: f64,
    pub test_error: f64,
    pub param_count: usize,
    pub train_seconds: f64,
    /// Some repetition produced a non-finite loss and was scored as error 1.
    pub diverged: bool,
}

/// Trains `arch` once per seed and averages the final validation/test error.
pub fn train_discrete(
    net: &Supernet,
    arch: &DiscreteArch,
    data: &DatasetSplit,
    recipe: &TrainRecipe,
) -> Result<BenchRow, BenchError> {
    recipe.validate()?;
    let started = Instant::now();
    let mut val_sum = 0.0;
    let mut test_sum = 0.0;
    let mut diverged = false;
    let mut param_count = 0;
    for run in 0..recipe.seeds_per_arch {
        let seed = recipe.arch_seed(arch, run);
        let mut model = instantiate_discrete(net, arch, seed)?;
        param_count = model.param_count();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        let mut sgd = Sgd::new(recipe.optimizer);
        let mut order: Vec<usize> = (0..data.train.len()).collect();
        let mut ok = true;
        'train: for epoch in 0..recipe.epochs {
            let lr = recipe.optimizer.lr_at(epoch, recipe.epochs);
            order.shuffle(&mut rng);
            for idx in order.chunks(recipe.batch_size) {
                let batch = data.train.select(idx);
                let eval = model.evaluate(&batch, rng.next_u64(), true)?;
                let grads = eval.grads.expect("requested gradients");
                if !eval.loss.is_finite() || grads.iter().any(|g| !g.all_finite()) {
                    ok = false;
                    break 'train;
                }
                sgd.step(&mut model.state_mut().tensors, &grads, lr);
            }
        }
        let mut errors = None;
        if ok {
            let v = model.evaluate(&data.val, 0, false)?;
            let t = model.evaluate(&data.test, 0, false)?;
            if v.loss.is_finite() && t.loss.is_finite() {
                errors = Some((
                    1.0 - accuracy(&v.logits, &data.val.labels),
                    1.0 - accuracy(&t.logits, &data.test.labels),
                ));
            }
        }
        let (val_err, test_err) = errors.unwrap_or_else(|| {
            diverged = true;
            log::warn!("architecture {} diverged on repetition {run}", arch.encoding());
            (1.0, 1.0)
        });
        val_sum += val_err;
        test_sum += test_err;
    }
    let n = recipe.seeds_per_arch as f64;
    Ok(BenchRow {
        val_error: val_sum / n,
        test_error: test_sum / n,
        param_count,
        train_seconds: if recipe.record_time {
            started.elapsed().as_secs_f64()
        } else {
            0.0
        },
        diverged,
    })
}

/// Exhaustive architecture → error table.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchTable {
    pub fingerprint: String,
    pub seeds_per_arch: usize,
    /// Rows in enumeration order.
    pub rows: Vec<(DiscreteArch, BenchRow)>,
    index: HashMap<DiscreteArch, usize>,
}

impl BenchTable {
    pub fn new(fingerprint: String, seeds_per_arch: usize, rows: Vec<(DiscreteArch, BenchRow)>) -> Self {
        let index = rows.iter().enumerate().map(|(i, (a, _))| (a.clone(), i)).collect();
        Self {
            fingerprint,
            seeds_per_arch,
            rows,
            index,
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Lookup after confirming the table was built for `expected_fingerprint`.
    pub fn query(&self, expected_fingerprint: &str, arch: &DiscreteArch) -> Result<&BenchRow, BenchError> {
        self.check(expected_fingerprint)?;
        self.get(arch).ok_or_else(|| BenchError::Missing(arch.encoding()))
    }

    pub fn check(&self, expected_fingerprint: &str) -> Result<(), BenchError> {
        if self.fingerprint != expected_fingerprint {
            return Err(BenchError::Fingerprint {
                expected: expected_fingerprint.to_string(),
                found: self.fingerprint.clone(),
            });
        }
        Ok(())
    }

    pub fn get(&self, arch: &DiscreteArch) -> Option<&BenchRow> {
        self.index.get(arch).map(|&i| &self.rows[i].1)
    }

    /// Row with the lowest validation error (first in enumeration order on ties).
    pub fn best_by_val(&self) -> Option<&(DiscreteArch, BenchRow)> {
        self.rows
            .iter()
            .fold(None, |best: Option<&(DiscreteArch, BenchRow)>, r| match best {
                Some(b) if b.1.val_error <= r.1.val_error => Some(b),
                _ => Some(r),
            })
    }

    pub fn min_test_error(&self) -> Option<f64> {
        self.rows.iter().map(|(_, r)| r.test_error).min_by(f64::total_cmp)
    }

    /// CSV with a `# fingerprint=...` metadata line before the header.
    pub fn to_csv(&self) -> String {
        let diverged: Vec<String> = self
            .rows
            .iter()
            .filter(|(_, r)| r.diverged)
            .map(|(a, _)| a.encoding())
            .collect();
        let mut out = format!(
            "# fingerprint={} seeds_per_arch={} diverged={}\n",
            self.fingerprint,
            self.seeds_per_arch,
            diverged.join(";")
        );
        out.push_str("arch_encoding,val_error,test_error,param_count,train_seconds\n");
        for (a, r) in &self.rows {
            writeln!(
                out,
                "{},{:?},{:?},{},{:?}",
                a.encoding(),
                r.val_error,
                r.test_error,
                r.param_count,
                r.train_seconds
            )
            .expect("string write");
        }
        out
    }

    pub fn from_csv(space: &CellSpace, text: &str) -> Result<Self, BenchError> {
        let bad = |m: String| BenchError::Parse(m);
        let mut lines = text.lines();
        let meta = lines
            .next()
            .and_then(|l| l.strip_prefix("# "))
            .ok_or_else(|| bad("missing metadata line".into()))?;
        let mut fingerprint = None;
        let mut seeds = None;
        let mut diverged: Vec<String> = Vec::new();
        for field in meta.split_whitespace() {
            match field.split_once('=') {
                Some(("fingerprint", v)) => fingerprint = Some(v.to_string()),
                Some(("seeds_per_arch", v)) => {
                    seeds = Some(v.parse::<usize>().map_err(|_| bad(format!("bad seeds_per_arch `{v}`")))?)
                }
                Some(("diverged", v)) => diverged = v.split(';').filter(|s| !s.is_empty()).map(String::from).collect(),
                _ => return Err(bad(format!("unknown metadata field `{field}`"))),
            }
        }
        if lines.next() != Some("arch_encoding,val_error,test_error,param_count,train_seconds") {
            return Err(bad("missing column header".into()));
        }
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.is_empty()) {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(bad(format!("row {}: expected 5 fields", i + 1)));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad(format!("row {}: bad number `{s}`", i + 1)));
            let arch = DiscreteArch::parse_encoding(space, f[0])?;
            let row = BenchRow {
                val_error: num(f[1])?,
                test_error: num(f[2])?,
                param_count: f[3].parse().map_err(|_| bad(format!("row {}: bad param count", i + 1)))?,
                train_seconds: num(f[4])?,
                diverged: diverged.iter().any(|d| d == f[0]),
            };
            if !(0.0..=1.0).contains(&row.val_error) || !(0.0..=1.0).contains(&row.test_error) {
                return Err(bad(format!("row {}: error outside [0, 1]", i + 1)));
            }
            rows.push((arch, row));
        }
        let expected = space.num_architectures().unwrap_or(usize::MAX);
        if rows.len() != expected {
            return Err(bad(format!("table has {} rows, space has {expected} architectures", rows.len())));
        }
        Ok(Self::new(
            fingerprint.ok_or_else(|| bad("missing fingerprint".into()))?,
            seeds.ok_or_else(|| bad("missing seeds_per_arch".into()))?,
            rows,
        ))
    }
}

impl TestErrorOracle for BenchTable {
    fn test_error(&self, arch: &DiscreteArch) -> Option<f64> {
        self.get(arch).map(|r| r.test_error)
    }
}

/// Trains every architecture of the space. Rows are independent of
/// `workers`: each architecture is seeded from its own encoding.
pub fn build_table(
    net: &Supernet,
    data: &DatasetSplit,
    recipe: &TrainRecipe,
    workers: usize,
    cap: usize,
) -> Result<BenchTable, BenchError> {
    recipe.validate()?;
    let archs = enumerate_space(net.space(), cap)?;
    let train = |a: &DiscreteArch| train_discrete(net, a, data, recipe).map(|r| (a.clone(), r));
    let rows: Vec<(DiscreteArch, BenchRow)> = if workers <= 1 {
        archs.iter().map(train).collect::<Result<_, _>>()?
    } else {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| BenchError::InvalidRecipe(format!("thread pool: {e}")))?;
        pool.install(|| archs.par_iter().map(train).collect::<Result<_, _>>())?
    };
    Ok(BenchTable::new(fingerprint(net, recipe, data), recipe.seeds_per_arch, rows))
}

/// Test error of each epoch's argmax architecture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnytimeCurve {
    pub test_error: Vec<f64>,
}

impl AnytimeCurve {
    pub fn last(&self) -> Option<f64> {
        self.test_error.last().copied()
    }

    pub fn min(&self) -> Option<f64> {
        self.test_error.iter().copied().min_by(f64::total_cmp)
    }

    /// The last value is worse than the best one seen earlier.
    pub fn deteriorated(&self) -> bool {
        matches!((self.last(), self.min()), (Some(l), Some(m)) if l > m)
    }
}

pub fn anytime_curve(trajectory: &Trajectory, table: &BenchTable, space: &CellSpace) -> Result<AnytimeCurve, BenchError> {
    let test_error = trajectory
        .records
        .iter()
        .map(|r| {
            let arch = DiscreteArch::from_listing(space, &r.discrete_arch)?;
            table
                .get(&arch)
                .map(|row| row.test_error)
                .ok_or_else(|| BenchError::Missing(arch.encoding()))
        })
        .collect::<Result<_, _>>()?;
    Ok(AnytimeCurve { test_error })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::supernet::OpKind;

    #[test]
    fn enumeration_order_and_counts() {
        let two = CellSpace::new(1, vec![(0, 2), (1, 2)], vec![OpKind::Skip, OpKind::Zero], 2).unwrap();
        let archs = enumerate_space(&two, 1024).unwrap();
        let ops: Vec<&[usize]> = archs.iter().map(|a| a.ops()).collect();
        assert_eq!(ops, vec![&[0, 0][..], &[0, 1], &[1, 0], &[1, 1]]);
        let three = CellSpace::new(
            2,
            vec![(0, 2), (1, 2), (2, 3)],
            vec![OpKind::Skip, OpKind::Zero, OpKind::LinearRelu, OpKind::Noise],
            2,
        )
        .unwrap();
        assert_eq!(enumerate_space(&three, 1024).unwrap().len(), 64);
        let err = enumerate_space(&three, 10).unwrap_err();
        assert_eq!(
            err,
            BenchError::TooLarge {
                required: "64".into(),
                cap: 10
            }
        );
        assert!(err.to_string().contains("64") && err.to_string().contains("10"));
    }

    #[test]
    fn arch_seeds_differ_by_encoding_and_run() {
        let space = CellSpace::new(1, vec![(0, 2), (1, 2)], vec![OpKind::Skip, OpKind::Zero], 2).unwrap();
        let r = TrainRecipe::default();
        let a = DiscreteArch::new(&space, vec![0, 1]).unwrap();
        let b = DiscreteArch::new(&space, vec![1, 0]).unwrap();
        assert_ne!(r.arch_seed(&a, 0), r.arch_seed(&b, 0));
        assert_ne!(r.arch_seed(&a, 0), r.arch_seed(&a, 1));
        assert_eq!(r.arch_seed(&a, 2), r.arch_seed(&a, 2));
    }
}
