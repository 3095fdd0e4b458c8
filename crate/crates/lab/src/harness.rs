//! Experiment pipeline: dataset, production ranker, click logs, optional EM,
//! estimator-driven training and nDCG@10 evaluation, emitted as CSV rows.

use std::fmt::Write as _;
use std::io::Write;

use anyhow::Result;
use rayon::prelude::*;

use cltr_core::clicksim::simulate_log;
use cltr_core::em::run_em;
use cltr_core::estimators::{true_weight_table, Estimator};
use cltr_core::metrics::evaluate_ndcg;
use cltr_core::train::{
    train_counterfactual, train_full_info, train_production, EpochRecord, Monitor,
};
use cltr_core::{
    derive_seed, BiasSchedule, ClickLog, Dataset, EmConfig, EmOutcome, EstimatorKind, Head,
    ScoringModel, TrainConfig, ZetaParams,
};

use crate::config::{BiasMode, ExperimentConfig};
use crate::io::{csv_field, load_dataset};

const TAG_PRODUCTION_INIT: u64 = 1;
const TAG_PRODUCTION_SUBSET: u64 = 2;
const TAG_PRODUCTION_TRAIN: u64 = 3;
const TAG_TRAIN_LOG: u64 = 4;
const TAG_VALIDATION_LOG: u64 = 5;
const TAG_MODEL_INIT: u64 = 6;
const TAG_MODEL_TRAIN: u64 = 7;
const TAG_EM: u64 = 8;

pub const SWEEP_COLUMNS: &str = "seed,budget,unit,estimator,bias_mode,head,ndcg10,production,\
full_info,schedule_hash,best_epoch,missing_labels,error";
pub const ZETA_COLUMNS: &str =
    "seed,budget,head,iteration,k,zeta_plus,zeta_minus,alpha,beta,true_alpha,true_beta";
pub const TRACE_COLUMNS: &str =
    "seed,budget,estimator,bias_mode,head,epoch,train_loss,validation_delta_hat,test_ndcg10";

/// Everything shared by the cells of one seed.
#[derive(Debug, Clone)]
pub struct SeedContext {
    pub seed: u64,
    pub dataset: Dataset,
    pub schedule: BiasSchedule,
    pub production: ScoringModel,
    pub production_ndcg: f64,
    pub production_trace: Vec<EpochRecord>,
    pub full_info: ScoringModel,
    pub full_info_ndcg: f64,
    pub full_info_trace: Vec<EpochRecord>,
}

#[derive(Debug, Clone)]
pub struct Logs {
    pub budget: u64,
    pub train: ClickLog,
    pub validation: ClickLog,
}

#[derive(Debug, Clone)]
pub struct CellResult {
    pub model: ScoringModel,
    pub ndcg10: f64,
    pub best_epoch: usize,
    pub missing_labels: usize,
    pub trace: Vec<EpochRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub seed: u64,
    pub budget: Option<u64>,
    pub unit: String,
    pub estimator: String,
    pub bias_mode: String,
    pub head: Option<Head>,
    pub ndcg10: Option<f64>,
    pub production: f64,
    pub full_info: f64,
    pub schedule_hash: u64,
    pub best_epoch: Option<usize>,
    pub missing_labels: usize,
    pub error: Option<String>,
}

impl SweepRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{:016x},{},{},{}",
            self.seed,
            opt(self.budget),
            self.unit,
            self.estimator,
            self.bias_mode,
            self.head.map(|h| h.name()).unwrap_or(""),
            opt(self.ndcg10),
            self.production,
            self.full_info,
            self.schedule_hash,
            opt(self.best_epoch),
            self.missing_labels,
            csv_field(self.error.as_deref().unwrap_or("")),
        )
    }
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Training settings for counterfactual and full-information runs.
pub fn train_config(cfg: &ExperimentConfig, seed: u64) -> TrainConfig {
    TrainConfig {
        learning_rate: cfg.learning_rate,
        epochs: cfg.epochs,
        sigma: cfg.sigma,
        seed: derive_seed(seed, TAG_MODEL_TRAIN),
        ..TrainConfig::default()
    }
}

pub fn model_template(cfg: &ExperimentConfig, feature_dim: usize, seed: u64) -> ScoringModel {
    ScoringModel::new(
        cfg.architecture.clone(),
        feature_dim,
        Head::None,
        derive_seed(seed, TAG_MODEL_INIT),
    )
}

pub fn em_config(cfg: &ExperimentConfig, head: Head, seed: u64, budget: u64) -> EmConfig {
    EmConfig {
        head,
        iterations: cfg.em_iterations,
        architecture: cfg.architecture.clone(),
        m_step: TrainConfig {
            learning_rate: cfg.em_learning_rate,
            epochs: cfg.em_epochs,
            sigma: cfg.sigma,
            ..TrainConfig::default()
        },
        seed: derive_seed(derive_seed(seed, TAG_EM), budget),
    }
}

/// Dataset, generating schedule, production ranker and the two reference models.
pub fn prepare_seed(cfg: &ExperimentConfig, seed: u64) -> Result<SeedContext> {
    let dataset = load_dataset(cfg, seed)?;
    let max_rank = dataset
        .train
        .iter()
        .chain(&dataset.validation)
        .map(|q| q.len())
        .max()
        .unwrap_or(1);
    let schedule = BiasSchedule::standard(cfg.eta, cfg.eps_minus_1, max_rank)?;

    let production_template = ScoringModel::new(
        cfg.architecture.clone(),
        dataset.feature_dim,
        Head::None,
        derive_seed(seed, TAG_PRODUCTION_INIT),
    );
    let production_cfg = TrainConfig {
        learning_rate: cfg.learning_rate,
        epochs: cfg.production_epochs,
        sigma: cfg.sigma,
        seed: derive_seed(seed, TAG_PRODUCTION_TRAIN),
        ..TrainConfig::default()
    };
    let n_production = cfg.production_queries.min(dataset.train.len());
    let test = Monitor {
        validation: None,
        test: Some(&dataset.test),
    };
    let production = train_production(
        &dataset.train,
        n_production,
        &production_template,
        &production_cfg,
        derive_seed(seed, TAG_PRODUCTION_SUBSET),
        &test,
    )?;

    let truth = true_weight_table(&dataset.validation);
    let full_info = train_full_info(
        &dataset.train,
        &model_template(cfg, dataset.feature_dim, seed),
        &train_config(cfg, seed),
        &Monitor {
            validation: Some((&truth, &dataset.validation)),
            test: Some(&dataset.test),
        },
    )?;

    Ok(SeedContext {
        seed,
        production_ndcg: evaluate_ndcg(&production.model, &dataset.test, 10),
        full_info_ndcg: evaluate_ndcg(&full_info.model, &dataset.test, 10),
        production: production.model,
        production_trace: production.trace,
        full_info: full_info.model,
        full_info_trace: full_info.trace,
        schedule,
        dataset,
    })
}

/// Training-query log at `budget` and an independent validation-query log
/// at `validation_fraction · budget`. Logs of different budgets for the same
/// seed share their leading sessions.
pub fn simulate_logs(cfg: &ExperimentConfig, ctx: &SeedContext, budget: u64) -> Result<Logs> {
    let train = simulate_log(
        &ctx.dataset.train,
        &ctx.production,
        &ctx.schedule,
        budget,
        cfg.budget_unit,
        derive_seed(ctx.seed, TAG_TRAIN_LOG),
    )?;
    let val_budget = ((budget as f64 * cfg.validation_fraction).ceil() as u64).max(1);
    let validation = simulate_log(
        &ctx.dataset.validation,
        &ctx.production,
        &ctx.schedule,
        val_budget,
        cfg.budget_unit,
        derive_seed(ctx.seed, TAG_VALIDATION_LOG),
    )?;
    Ok(Logs {
        budget,
        train,
        validation,
    })
}

pub fn estimate_bias(
    cfg: &ExperimentConfig,
    ctx: &SeedContext,
    logs: &Logs,
    head: Head,
) -> Result<EmOutcome> {
    Ok(run_em(
        &logs.train,
        &ctx.dataset.train,
        &em_config(cfg, head, ctx.seed, logs.budget),
    )?)
}

/// Trains one estimator on the training log and selects the epoch by the
/// same estimator's `Δ̂` on the validation log.
pub fn train_cell(
    cfg: &ExperimentConfig,
    ctx: &SeedContext,
    logs: &Logs,
    kind: EstimatorKind,
    schedule: &BiasSchedule,
) -> Result<CellResult> {
    let estimator = Estimator::from(kind);
    let pseudo = estimator.pseudo_labels(&logs.train, schedule)?;
    let val_table = estimator.weight_table(&logs.validation, schedule)?;
    let out = train_counterfactual(
        &ctx.dataset.train,
        &pseudo,
        &model_template(cfg, ctx.dataset.feature_dim, ctx.seed),
        &train_config(cfg, ctx.seed),
        &Monitor {
            validation: Some((&val_table, &ctx.dataset.validation)),
            test: Some(&ctx.dataset.test),
        },
    )?;
    Ok(CellResult {
        ndcg10: evaluate_ndcg(&out.model, &ctx.dataset.test, 10),
        model: out.model,
        best_epoch: out.best_epoch,
        missing_labels: out.missing_labels,
        trace: out.trace,
    })
}

/// Row-oriented CSV destinations; each receives its column line first.
pub struct CsvSink<'a> {
    pub sweep: &'a mut dyn Write,
    pub zeta: &'a mut dyn Write,
    pub trace: &'a mut dyn Write,
}

impl CsvSink<'_> {
    pub fn begin(&mut self, cfg: &ExperimentConfig) -> std::io::Result<()> {
        let header = cfg.header();
        writeln!(self.sweep, "{header}{SWEEP_COLUMNS}")?;
        writeln!(self.zeta, "{header}{ZETA_COLUMNS}")?;
        writeln!(self.trace, "{header}{TRACE_COLUMNS}")
    }

    fn flush(&mut self) -> std::io::Result<()> {
        self.sweep.flush()?;
        self.zeta.flush()?;
        self.trace.flush()
    }
}

pub fn trace_rows(
    seed: u64,
    budget: Option<u64>,
    estimator: &str,
    bias_mode: &str,
    head: Option<Head>,
    trace: &[EpochRecord],
) -> String {
    let mut s = String::new();
    for r in trace {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            seed,
            opt(budget),
            estimator,
            bias_mode,
            head.map(|h| h.name()).unwrap_or(""),
            r.epoch,
            opt(r.train_loss),
            opt(r.validation_delta_hat),
            opt(r.test_ndcg10),
        );
    }
    s
}

pub fn zeta_rows(
    seed: u64,
    budget: Option<u64>,
    head: Head,
    trajectory: &[ZetaParams],
    truth: &BiasSchedule,
) -> String {
    let mut s = String::new();
    for (it, z) in trajectory.iter().enumerate() {
        for k in 0..z.max_rank() {
            let (p, m) = (z.zeta_plus[k], z.zeta_minus[k]);
            let (ta, tb) = truth
                .affine_at(k + 1)
                .map(|(a, b)| (a.to_string(), b.to_string()))
                .unwrap_or_default();
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{}",
                seed,
                opt(budget),
                head.name(),
                it,
                k + 1,
                p,
                m,
                p - m,
                m,
                ta,
                tb
            );
        }
    }
    s
}

struct Cell {
    budget: u64,
    head: Option<Head>,
    kind: EstimatorKind,
}

/// Runs the full grid. Per seed, the two reference rows come first, then one
/// row per (budget, head, estimator); a failing cell is recorded in its
/// row's `error` column and the sweep continues. Rows of a seed are written
/// once the seed completes, in grid order.
pub fn run_sweep(cfg: &ExperimentConfig, sink: &mut CsvSink<'_>) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    sink.begin(cfg)?;
    let mut all = Vec::new();
    let mode = cfg.bias_mode.name();
    for &seed in &cfg.seeds {
        let ctx = match prepare_seed(cfg, seed) {
            Ok(ctx) => ctx,
            Err(e) => {
                let row = SweepRow {
                    seed,
                    budget: None,
                    unit: cfg.budget_unit.to_string(),
                    estimator: "production".into(),
                    bias_mode: mode.into(),
                    head: None,
                    ndcg10: None,
                    production: f64::NAN,
                    full_info: f64::NAN,
                    schedule_hash: 0,
                    best_epoch: None,
                    missing_labels: 0,
                    error: Some(format!("{e:#}")),
                };
                writeln!(sink.sweep, "{}", row.to_csv())?;
                all.push(row);
                continue;
            }
        };
        let base = SweepRow {
            seed,
            budget: None,
            unit: cfg.budget_unit.to_string(),
            estimator: String::new(),
            bias_mode: mode.into(),
            head: None,
            ndcg10: None,
            production: ctx.production_ndcg,
            full_info: ctx.full_info_ndcg,
            schedule_hash: ctx.schedule.fingerprint(),
            best_epoch: None,
            missing_labels: 0,
            error: None,
        };
        let mut rows = vec![
            SweepRow {
                estimator: "production".into(),
                ndcg10: Some(ctx.production_ndcg),
                ..base.clone()
            },
            SweepRow {
                estimator: "full-info".into(),
                ndcg10: Some(ctx.full_info_ndcg),
                ..base.clone()
            },
        ];
        let mut traces = trace_rows(seed, None, "production", mode, None, &ctx.production_trace);
        traces += &trace_rows(seed, None, "full-info", mode, None, &ctx.full_info_trace);
        let mut zetas = String::new();

        let logs: Vec<Result<Logs>> = cfg
            .budgets
            .par_iter()
            .map(|&b| simulate_logs(cfg, &ctx, b))
            .collect();

        let heads: Vec<Option<Head>> = match cfg.bias_mode {
            BiasMode::Oracle => vec![None],
            BiasMode::Estimated => cfg.heads.iter().copied().map(Some).collect(),
        };
        let em_jobs: Vec<(usize, Head)> = (0..logs.len())
            .flat_map(|bi| cfg.heads.iter().map(move |&h| (bi, h)))
            .filter(|_| cfg.bias_mode == BiasMode::Estimated)
            .collect();
        let em_results: Vec<Result<EmOutcome>> = em_jobs
            .par_iter()
            .map(|&(bi, h)| match &logs[bi] {
                Ok(l) => estimate_bias(cfg, &ctx, l, h),
                Err(e) => Err(anyhow::anyhow!("{e:#}")),
            })
            .collect();
        for ((bi, h), em) in em_jobs.iter().zip(&em_results) {
            if let Ok(em) = em {
                zetas += &zeta_rows(
                    seed,
                    Some(cfg.budgets[*bi]),
                    *h,
                    &em.trajectory,
                    &ctx.schedule,
                );
            }
        }

        let mut cells = Vec::new();
        for &budget in &cfg.budgets {
            for &head in &heads {
                for &kind in &cfg.estimators {
                    cells.push(Cell { budget, head, kind });
                }
            }
        }
        let results: Vec<Result<CellResult>> = cells
            .par_iter()
            .map(|c| {
                let bi = cfg.budgets.iter().position(|&b| b == c.budget).unwrap_or(0);
                let logs = logs[bi].as_ref().map_err(|e| anyhow::anyhow!("{e:#}"))?;
                let schedule = match c.head {
                    None => ctx.schedule.clone(),
                    Some(h) => {
                        let ji = em_jobs
                            .iter()
                            .position(|&(b, jh)| b == bi && jh == h)
                            .unwrap_or(0);
                        let em = em_results[ji]
                            .as_ref()
                            .map_err(|e| anyhow::anyhow!("EM failed: {e:#}"))?;
                        em.zeta.to_schedule()?
                    }
                };
                train_cell(cfg, &ctx, logs, c.kind, &schedule)
            })
            .collect();
        for (c, r) in cells.iter().zip(results) {
            let row = match r {
                Ok(res) => {
                    traces += &trace_rows(
                        seed,
                        Some(c.budget),
                        c.kind.name(),
                        mode,
                        c.head,
                        &res.trace,
                    );
                    SweepRow {
                        budget: Some(c.budget),
                        estimator: c.kind.name().into(),
                        head: c.head,
                        ndcg10: Some(res.ndcg10),
                        best_epoch: Some(res.best_epoch),
                        missing_labels: res.missing_labels,
                        ..base.clone()
                    }
                }
                Err(e) => SweepRow {
                    budget: Some(c.budget),
                    estimator: c.kind.name().into(),
                    head: c.head,
                    error: Some(format!("{e:#}")),
                    ..base.clone()
                },
            };
            rows.push(row);
        }

        for r in &rows {
            writeln!(sink.sweep, "{}", r.to_csv())?;
        }
        sink.zeta.write_all(zetas.as_bytes())?;
        sink.trace.write_all(traces.as_bytes())?;
        sink.flush()?;
        all.extend(rows);
    }
    Ok(all)
}
