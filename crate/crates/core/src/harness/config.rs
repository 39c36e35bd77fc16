use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::analysis::HessianBasis;
use crate::data::{DatasetSpec, SplitFractions};
use crate::minibench::{TrainRecipe, DEFAULT_ENUMERATION_CAP};
use crate::search::{Norm, PerturbationKind, PgdAscent, PgdStart, SearchConfig, METHOD_NAMES};
use crate::supernet::{CellSpace, OpKind};

/// Settings of the `adv` method.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdvSettings {
    pub steps: usize,
    /// Ascent step; absent means `2.5 * eps / steps`.
    pub step_size: Option<f64>,
    pub norm: Norm,
    pub start: PgdStart,
    pub ascent: PgdAscent,
}

impl Default for AdvSettings {
    fn default() -> Self {
        match PerturbationKind::from_method("adv").expect("known method") {
            PerturbationKind::Adv {
                steps,
                step_size,
                norm,
                start,
                ascent,
            } => Self {
                steps,
                step_size,
                norm,
                start,
                ascent,
            },
            _ => unreachable!(),
        }
    }
}

/// Settings of the `hessreg` method.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HessregSettings {
    pub num_directions: usize,
    pub penalty_coef: f64,
    pub fd_step: f64,
}

impl Default for HessregSettings {
    fn default() -> Self {
        match PerturbationKind::from_method("hessreg").expect("known method") {
            PerturbationKind::Hessreg {
                num_directions,
                penalty_coef,
                fd_step,
            } => Self {
                num_directions,
                penalty_coef,
                fd_step,
            },
            _ => unreachable!(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSettings {
    pub recipe: TrainRecipe,
    /// Prebuilt table used as the test-error oracle.
    pub table: Option<PathBuf>,
    pub cap: usize,
}

impl Default for BenchSettings {
    fn default() -> Self {
        Self {
            recipe: TrainRecipe::default(),
            table: None,
            cap: DEFAULT_ENUMERATION_CAP,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LandscapeSettings {
    /// Scan at the first and last epoch of every search run.
    pub enabled: bool,
    pub radius: f64,
    pub grid_n: usize,
    pub basis: HessianBasis,
    /// Leading validation samples scanned.
    pub subset: usize,
}

impl Default for LandscapeSettings {
    fn default() -> Self {
        Self {
            enabled: false,
            radius: 1.0,
            grid_n: 21,
            basis: HessianBasis::PreSoftmaxAlpha,
            subset: 512,
        }
    }
}

/// One experiment: data, cell space, search settings, methods and seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub output_dir: PathBuf,
    /// Method of the `search` subcommand.
    pub method: String,
    /// Methods of the `compare` subcommand.
    pub methods: Vec<String>,
    pub seeds: Vec<u64>,
    /// Dataset generation/shuffle seed, shared by every search seed.
    pub data_seed: u64,
    pub dataset: DatasetSpec,
    pub split: SplitFractions,
    pub space: CellSpace,
    /// `search.perturbation` is ignored; it is set from the method name with
    /// the `adv` / `hessreg` tables.
    pub search: SearchConfig,
    pub adv: AdvSettings,
    pub hessreg: HessregSettings,
    pub bench: BenchSettings,
    pub landscape: LandscapeSettings,
}

/// The chain cell `0 -> 2 -> 3 -> 4` over all six ops.
pub fn default_space() -> CellSpace {
    CellSpace::new(3, vec![(0, 2), (2, 3), (3, 4)], OpKind::ALL.to_vec(), 8).expect("valid default space")
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let mut search = SearchConfig::default();
        search.arch_optim.lr = 3e-3;
        Self {
            output_dir: PathBuf::from("runs"),
            method: "darts".into(),
            methods: vec!["darts".into(), "rs".into(), "adv".into()],
            seeds: (0..5).collect(),
            data_seed: 0,
            dataset: DatasetSpec::default(),
            split: SplitFractions::default(),
            space: default_space(),
            search,
            adv: AdvSettings::default(),
            hessreg: HessregSettings::default(),
            bench: BenchSettings::default(),
            landscape: LandscapeSettings::default(),
        }
    }
}

/// Command-line overrides applied on top of a config file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub method: Option<String>,
    pub eps_start: Option<f64>,
    pub eps_end: Option<f64>,
    pub pgd_steps: Option<usize>,
    pub pgd_lr: Option<f64>,
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let raw: toml::Table = text.parse().map_err(|e: toml::de::Error| HarnessError::Config(e.to_string()))?;
        if raw
            .get("search")
            .and_then(|s| s.as_table())
            .is_some_and(|s| s.contains_key("perturbation"))
        {
            return Err(HarnessError::Config(
                "search.perturbation is not configurable; use `method`/`methods` with the [adv] and [hessreg] tables"
                    .into(),
            ));
        }
        let config: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        let mut doc = toml::Table::try_from(self).expect("config serializes");
        if let Some(search) = doc.get_mut("search").and_then(|s| s.as_table_mut()) {
            search.remove("perturbation");
        }
        toml::to_string(&doc).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.seeds.is_empty() {
            return Err(HarnessError::Config("seed list is empty".into()));
        }
        if self.methods.is_empty() {
            return Err(HarnessError::Config("method list is empty".into()));
        }
        for m in std::iter::once(&self.method).chain(&self.methods) {
            if !METHOD_NAMES.contains(&m.as_str()) {
                return Err(HarnessError::Config(format!(
                    "unknown method `{m}` (expected one of {})",
                    METHOD_NAMES.join(", ")
                )));
            }
        }
        let mut seen = self.methods.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.methods.len() {
            return Err(HarnessError::Config("method list contains duplicates".into()));
        }
        self.split.validate()?;
        self.space.validate()?;
        if self.landscape.grid_n % 2 == 0 || self.landscape.subset == 0 {
            return Err(HarnessError::Config("landscape.grid_n must be odd and landscape.subset positive".into()));
        }
        for m in METHOD_NAMES {
            self.search_config(m, self.seeds[0])?.validate()?;
        }
        Ok(())
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<(), HarnessError> {
        if let Some(s) = o.seed {
            self.seeds = vec![s];
        }
        if let Some(m) = &o.method {
            self.method = m.clone();
            self.methods = vec![m.clone()];
        }
        if let Some(v) = o.eps_start {
            self.search.eps_start = v;
        }
        if let Some(v) = o.eps_end {
            self.search.eps_end = v;
        }
        if let Some(v) = o.pgd_steps {
            self.adv.steps = v;
        }
        if let Some(v) = o.pgd_lr {
            self.adv.step_size = Some(v);
        }
        if let Some(p) = &o.out {
            self.output_dir = p.clone();
        }
        self.validate()
    }

    pub fn perturbation(&self, method: &str) -> Result<PerturbationKind, HarnessError> {
        Ok(match PerturbationKind::from_method(method)? {
            PerturbationKind::Adv { .. } => PerturbationKind::Adv {
                steps: self.adv.steps,
                step_size: self.adv.step_size,
                norm: self.adv.norm,
                start: self.adv.start,
                ascent: self.adv.ascent,
            },
            PerturbationKind::Hessreg { .. } => PerturbationKind::Hessreg {
                num_directions: self.hessreg.num_directions,
                penalty_coef: self.hessreg.penalty_coef,
                fd_step: self.hessreg.fd_step,
            },
            other => other,
        })
    }

    pub fn search_config(&self, method: &str, seed: u64) -> Result<SearchConfig, HarnessError> {
        Ok(SearchConfig {
            perturbation: self.perturbation(method)?,
            seed,
            ..self.search.clone()
        })
    }

    /// Directory of one (method, seed) run.
    pub fn run_dir(&self, method: &str, seed: u64) -> PathBuf {
        self.output_dir.join(method).join(format!("seed_{seed}"))
    }
}
