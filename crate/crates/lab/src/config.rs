//! Experiment configuration: a flat `key = value` text format with
//! `[section]` headers. Every value can also be overridden from the CLI.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use cltr_core::{Architecture, BudgetUnit, EstimatorKind, Head};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("bad value for `{key}`: {msg}")]
    Value { key: String, msg: String },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BiasMode {
    /// Estimators use the generating schedule.
    Oracle,
    /// Estimators use `ζ` recovered by EM from the same clicks.
    Estimated,
}

impl BiasMode {
    pub fn name(self) -> &'static str {
        match self {
            BiasMode::Oracle => "oracle",
            BiasMode::Estimated => "estimated",
        }
    }
}

impl FromStr for BiasMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "oracle" => Ok(BiasMode::Oracle),
            "estimated" => Ok(BiasMode::Estimated),
            other => Err(format!("unknown bias mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSource {
    /// Regenerated per seed.
    Synthetic {
        n_queries: usize,
        docs_per_query: usize,
        feature_dim: usize,
    },
    /// Fixed LTR text files; the seed varies only production, clicks and training.
    Files {
        train: PathBuf,
        validation: PathBuf,
        test: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    pub eta: f64,
    pub eps_minus_1: f64,
    pub bias_mode: BiasMode,
    pub budgets: Vec<u64>,
    pub budget_unit: BudgetUnit,
    /// Validation-log budget as a fraction of the training budget.
    pub validation_fraction: f64,
    pub estimators: Vec<EstimatorKind>,
    pub heads: Vec<Head>,
    pub em_iterations: usize,
    pub em_epochs: usize,
    pub em_learning_rate: f64,
    pub architecture: Architecture,
    pub learning_rate: f64,
    pub epochs: usize,
    pub sigma: f64,
    pub production_queries: usize,
    pub production_epochs: usize,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetSource::Synthetic {
                n_queries: 1000,
                docs_per_query: 20,
                feature_dim: 32,
            },
            eta: 1.0,
            eps_minus_1: 0.65,
            bias_mode: BiasMode::Oracle,
            budgets: vec![1_000, 10_000, 100_000, 1_000_000],
            budget_unit: BudgetUnit::Clicks,
            validation_fraction: 0.15,
            estimators: EstimatorKind::ALL.to_vec(),
            heads: vec![Head::SoftMinMax],
            em_iterations: 100,
            em_epochs: 8,
            em_learning_rate: 0.02,
            architecture: Architecture::desk_default(),
            learning_rate: 0.02,
            epochs: 32,
            sigma: 1.0,
            production_queries: 20,
            production_epochs: 32,
            seeds: vec![0, 1, 2, 3],
            out: PathBuf::from("results"),
        }
    }
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>, ConfigError>
where
    T::Err: std::fmt::Display,
{
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_one(key, s))
        .collect()
}

fn parse_one<T: FromStr>(key: &str, v: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    v.parse().map_err(|e: T::Err| ConfigError::Value {
        key: key.to_string(),
        msg: e.to_string(),
    })
}

fn join<T: std::fmt::Display>(items: &[T]) -> String {
    items
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

impl ExperimentConfig {
    /// Parses config text on top of the defaults.
    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest.strip_suffix(']').ok_or_else(|| ConfigError::Syntax {
                    line: i + 1,
                    msg: "unterminated section header".into(),
                })?;
                section = name.trim().to_string();
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: i + 1,
                msg: "expected `key = value`".into(),
            })?;
            let key = if section.is_empty() {
                k.trim().to_string()
            } else {
                format!("{section}.{}", k.trim())
            };
            cfg.set(&key, v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sets one dotted key (`section.key`) from its text value.
    pub fn set(&mut self, key: &str, v: &str) -> Result<(), ConfigError> {
        match key {
            "dataset.source" => match v {
                "synthetic" => {
                    if !matches!(self.dataset, DatasetSource::Synthetic { .. }) {
                        self.dataset = ExperimentConfig::default().dataset;
                    }
                }
                "files" => {
                    if !matches!(self.dataset, DatasetSource::Files { .. }) {
                        self.dataset = DatasetSource::Files {
                            train: PathBuf::new(),
                            validation: PathBuf::new(),
                            test: PathBuf::new(),
                        };
                    }
                }
                other => {
                    return Err(ConfigError::Value {
                        key: key.into(),
                        msg: format!("expected synthetic or files, got `{other}`"),
                    })
                }
            },
            "dataset.n_queries" | "dataset.docs_per_query" | "dataset.feature_dim" => {
                let n: usize = parse_one(key, v)?;
                let DatasetSource::Synthetic {
                    n_queries,
                    docs_per_query,
                    feature_dim,
                } = &mut self.dataset
                else {
                    return Err(ConfigError::Invalid(format!(
                        "`{key}` needs source = synthetic"
                    )));
                };
                match key {
                    "dataset.n_queries" => *n_queries = n,
                    "dataset.docs_per_query" => *docs_per_query = n,
                    _ => *feature_dim = n,
                }
            }
            "dataset.train" | "dataset.validation" | "dataset.test" => {
                let DatasetSource::Files {
                    train,
                    validation,
                    test,
                } = &mut self.dataset
                else {
                    return Err(ConfigError::Invalid(format!(
                        "`{key}` needs source = files"
                    )));
                };
                let slot = match key {
                    "dataset.train" => train,
                    "dataset.validation" => validation,
                    _ => test,
                };
                *slot = PathBuf::from(v);
            }
            "bias.eta" => self.eta = parse_one(key, v)?,
            "bias.eps_minus_1" => self.eps_minus_1 = parse_one(key, v)?,
            "bias.mode" => self.bias_mode = parse_one(key, v)?,
            "clicks.budgets" => self.budgets = parse_list(key, v)?,
            "clicks.unit" => self.budget_unit = parse_one(key, v)?,
            "clicks.validation_fraction" => self.validation_fraction = parse_one(key, v)?,
            "estimators.kinds" => self.estimators = parse_list(key, v)?,
            "em.heads" => self.heads = parse_list(key, v)?,
            "em.iterations" => self.em_iterations = parse_one(key, v)?,
            "em.epochs" => self.em_epochs = parse_one(key, v)?,
            "em.learning_rate" => self.em_learning_rate = parse_one(key, v)?,
            "train.architecture" => self.architecture = parse_one(key, v)?,
            "train.learning_rate" => self.learning_rate = parse_one(key, v)?,
            "train.epochs" => self.epochs = parse_one(key, v)?,
            "train.sigma" => self.sigma = parse_one(key, v)?,
            "train.production_queries" => self.production_queries = parse_one(key, v)?,
            "train.production_epochs" => self.production_epochs = parse_one(key, v)?,
            "run.seeds" => self.seeds = parse_list(key, v)?,
            "run.out" => self.out = PathBuf::from(v),
            other => return Err(ConfigError::UnknownKey(other.into())),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.into()));
        if self.budgets.is_empty() || self.budgets.contains(&0) {
            return bad("need at least one budget, all positive");
        }
        if self.estimators.is_empty() {
            return bad("need at least one estimator");
        }
        if self.seeds.is_empty() {
            return bad("need at least one seed");
        }
        if self.bias_mode == BiasMode::Estimated && self.heads.is_empty() {
            return bad("estimated bias mode needs at least one EM head");
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction <= 1.0) {
            return bad("validation_fraction must be in (0, 1]");
        }
        if self.em_iterations == 0 {
            return bad("em.iterations must be at least 1");
        }
        if let DatasetSource::Synthetic {
            n_queries,
            docs_per_query,
            feature_dim,
        } = self.dataset
        {
            if n_queries == 0 || docs_per_query == 0 || feature_dim == 0 {
                return bad("synthetic dataset sizes must be positive");
            }
        }
        Ok(())
    }

    /// Canonical text form; `from_text(to_text())` reproduces the config.
    pub fn to_text(&self) -> String {
        let mut s = String::from("[dataset]\n");
        match &self.dataset {
            DatasetSource::Synthetic {
                n_queries,
                docs_per_query,
                feature_dim,
            } => {
                let _ = writeln!(s, "source = synthetic");
                let _ = writeln!(s, "n_queries = {n_queries}");
                let _ = writeln!(s, "docs_per_query = {docs_per_query}");
                let _ = writeln!(s, "feature_dim = {feature_dim}");
            }
            DatasetSource::Files {
                train,
                validation,
                test,
            } => {
                let _ = writeln!(s, "source = files");
                let _ = writeln!(s, "train = {}", train.display());
                let _ = writeln!(s, "validation = {}", validation.display());
                let _ = writeln!(s, "test = {}", test.display());
            }
        }
        let _ = write!(
            s,
            "[bias]\neta = {}\neps_minus_1 = {}\nmode = {}\n\
             [clicks]\nbudgets = {}\nunit = {}\nvalidation_fraction = {}\n\
             [estimators]\nkinds = {}\n\
             [em]\nheads = {}\niterations = {}\nepochs = {}\nlearning_rate = {}\n\
             [train]\narchitecture = {}\nlearning_rate = {}\nepochs = {}\nsigma = {}\n\
             production_queries = {}\nproduction_epochs = {}\n\
             [run]\nseeds = {}\nout = {}\n",
            self.eta,
            self.eps_minus_1,
            self.bias_mode.name(),
            join(&self.budgets),
            self.budget_unit,
            self.validation_fraction,
            join(&self.estimators),
            join(&self.heads),
            self.em_iterations,
            self.em_epochs,
            self.em_learning_rate,
            self.architecture,
            self.learning_rate,
            self.epochs,
            self.sigma,
            self.production_queries,
            self.production_epochs,
            join(&self.seeds),
            self.out.display(),
        );
        s
    }

    /// The config as `#`-prefixed lines for CSV headers.
    pub fn header(&self) -> String {
        self.to_text().lines().map(|l| format!("# {l}\n")).collect()
    }
}
