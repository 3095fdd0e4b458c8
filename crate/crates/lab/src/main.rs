use std::fmt::Write as _;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use cltr_core::metrics::{evaluate_ndcg, true_delta};
use cltr_core::{BudgetUnit, EstimatorKind, Head, RankWeight, ScoringModel};
use cltr_lab::config::{BiasMode, ExperimentConfig};
use cltr_lab::harness::{
    estimate_bias, prepare_seed, simulate_logs, trace_rows, train_cell, zeta_rows, CsvSink,
    SWEEP_COLUMNS, TRACE_COLUMNS, ZETA_COLUMNS,
};
use cltr_lab::io::{load_dataset, read_text, write_dataset, write_text};

/// Counterfactual learning-to-rank laboratory.
#[derive(Parser)]
#[command(name = "cltr", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// Config file (`key = value` with `[section]` headers).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Replaces the seed list with a single seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    eta: Option<f64>,
    #[arg(long = "eps-minus-1", global = true)]
    eps_minus_1: Option<f64>,
    /// One or more comma-separated click budgets.
    #[arg(long, global = true, value_delimiter = ',')]
    budget: Vec<u64>,
    #[arg(long = "budget-unit", global = true)]
    budget_unit: Option<BudgetUnit>,
    /// naive, ips, bayes-ips or affine (comma-separated for sweeps).
    #[arg(long, global = true, value_delimiter = ',')]
    estimator: Vec<EstimatorKind>,
    #[arg(long = "bias-mode", global = true, value_parser = parse_mode)]
    bias_mode: Option<BiasMode>,
    /// sigmoid, softmax or soft-min-max (comma-separated for sweeps).
    #[arg(long, global = true, value_delimiter = ',')]
    head: Vec<Head>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

fn parse_mode(s: &str) -> std::result::Result<BiasMode, String> {
    s.parse()
}

#[derive(Subcommand)]
enum Command {
    /// Writes the seed's dataset splits as LTR text files.
    Generate,
    /// Trains the production ranker and writes a click log at the first budget.
    Simulate,
    /// Estimates the bias parameters with EM for the first head.
    Em,
    /// Runs one sweep cell: first budget, estimator and head.
    Train,
    /// Runs the full grid.
    Sweep,
    /// Scores a checkpoint on the seed's dataset splits.
    Eval {
        #[arg(long)]
        model: PathBuf,
    },
}

fn resolve(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::from_text(&read_text(p)?)
            .with_context(|| format!("config {}", p.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seeds = vec![s];
    }
    if let Some(v) = common.eta {
        cfg.eta = v;
    }
    if let Some(v) = common.eps_minus_1 {
        cfg.eps_minus_1 = v;
    }
    if !common.budget.is_empty() {
        cfg.budgets = common.budget.clone();
    }
    if let Some(u) = common.budget_unit {
        cfg.budget_unit = u;
    }
    if !common.estimator.is_empty() {
        cfg.estimators = common.estimator.clone();
    }
    if let Some(m) = common.bias_mode {
        cfg.bias_mode = m;
    }
    if !common.head.is_empty() {
        cfg.heads = common.head.clone();
    }
    if let Some(o) = &common.out {
        cfg.out = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn csv(cfg: &ExperimentConfig, columns: &str, body: &str) -> String {
    format!("{}{columns}\n{body}", cfg.header())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let cfg = resolve(&cli.common)?;
    let out = cfg.out.clone();
    let seed = cfg.seeds[0];
    let budget = cfg.budgets[0];
    match cli.command {
        Command::Generate => {
            let ds = load_dataset(&cfg, seed)?;
            write_dataset(&out, &ds)?;
            eprintln!(
                "wrote {} / {} / {} queries to {}",
                ds.train.len(),
                ds.validation.len(),
                ds.test.len(),
                out.display()
            );
        }
        Command::Simulate => {
            let ctx = prepare_seed(&cfg, seed)?;
            let logs = simulate_logs(&cfg, &ctx, budget)?;
            write_text(&out.join("clicks.txt"), &logs.train.to_text())?;
            write_text(
                &out.join("validation_clicks.txt"),
                &logs.validation.to_text(),
            )?;
            write_text(
                &out.join("production.model"),
                &ctx.production.to_checkpoint(),
            )?;
            let mut body = String::new();
            for i in logs.train.impressions() {
                let _ = writeln!(
                    body,
                    "{},{},{},{},{}",
                    i.query_id, i.doc_id, i.rank, i.impressions, i.clicks
                );
            }
            write_text(
                &out.join("impressions.csv"),
                &csv(&cfg, "qid,docid,rank,impressions,clicks", &body),
            )?;
            write_text(
                &out.join("schedule.csv"),
                &format!("{}{}", cfg.header(), ctx.schedule.to_csv_table()),
            )?;
            eprintln!(
                "{} sessions, {} clicks",
                logs.train.len(),
                logs.train.total_clicks()
            );
        }
        Command::Em => {
            let head = first_head(&cfg);
            let ctx = prepare_seed(&cfg, seed)?;
            let logs = simulate_logs(&cfg, &ctx, budget)?;
            let em = estimate_bias(&cfg, &ctx, &logs, head)?;
            let body = zeta_rows(seed, Some(budget), head, &em.trajectory, &ctx.schedule);
            write_text(&out.join("zeta.csv"), &csv(&cfg, ZETA_COLUMNS, &body))?;
            write_text(&out.join("em.model"), &em.model.to_checkpoint())?;
        }
        Command::Train => {
            let kind = cfg.estimators[0];
            let ctx = prepare_seed(&cfg, seed)?;
            let logs = simulate_logs(&cfg, &ctx, budget)?;
            let (schedule, head) = match cfg.bias_mode {
                BiasMode::Oracle => (ctx.schedule.clone(), None),
                BiasMode::Estimated => {
                    let head = first_head(&cfg);
                    let em = estimate_bias(&cfg, &ctx, &logs, head)?;
                    let body = zeta_rows(seed, Some(budget), head, &em.trajectory, &ctx.schedule);
                    write_text(&out.join("zeta.csv"), &csv(&cfg, ZETA_COLUMNS, &body))?;
                    (em.zeta.to_schedule()?, Some(head))
                }
            };
            let res = train_cell(&cfg, &ctx, &logs, kind, &schedule)?;
            let row = cltr_lab::SweepRow {
                seed,
                budget: Some(budget),
                unit: cfg.budget_unit.to_string(),
                estimator: kind.name().into(),
                bias_mode: cfg.bias_mode.name().into(),
                head,
                ndcg10: Some(res.ndcg10),
                production: ctx.production_ndcg,
                full_info: ctx.full_info_ndcg,
                schedule_hash: ctx.schedule.fingerprint(),
                best_epoch: Some(res.best_epoch),
                missing_labels: res.missing_labels,
                error: None,
            };
            write_text(
                &out.join("sweep.csv"),
                &csv(&cfg, SWEEP_COLUMNS, &format!("{}\n", row.to_csv())),
            )?;
            let trace = trace_rows(
                seed,
                Some(budget),
                kind.name(),
                cfg.bias_mode.name(),
                head,
                &res.trace,
            );
            write_text(&out.join("trace.csv"), &csv(&cfg, TRACE_COLUMNS, &trace))?;
            write_text(&out.join("model.ckpt"), &res.model.to_checkpoint())?;
            eprintln!(
                "{kind}: nDCG@10 {:.4} (production {:.4}, full info {:.4})",
                res.ndcg10, ctx.production_ndcg, ctx.full_info_ndcg
            );
        }
        Command::Sweep => {
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            let open = |name: &str| -> Result<BufWriter<File>> {
                let p = out.join(name);
                Ok(BufWriter::new(
                    File::create(&p).with_context(|| format!("creating {}", p.display()))?,
                ))
            };
            let (mut s, mut z, mut t) = (open("sweep.csv")?, open("zeta.csv")?, open("trace.csv")?);
            let rows = cltr_lab::run_sweep(
                &cfg,
                &mut CsvSink {
                    sweep: &mut s,
                    zeta: &mut z,
                    trace: &mut t,
                },
            )?;
            let failed = rows.iter().filter(|r| r.error.is_some()).count();
            eprintln!("{} rows ({failed} failed) in {}", rows.len(), out.display());
        }
        Command::Eval { model } => eval(&cfg, seed, &model, &out)?,
    }
    Ok(())
}

fn first_head(cfg: &ExperimentConfig) -> Head {
    cfg.heads.first().copied().unwrap_or(Head::SoftMinMax)
}

fn eval(cfg: &ExperimentConfig, seed: u64, model: &Path, out: &Path) -> Result<()> {
    let m = ScoringModel::from_checkpoint(&read_text(model)?)
        .with_context(|| format!("checkpoint {}", model.display()))?;
    let ds = load_dataset(cfg, seed)?;
    if m.feature_dim != ds.feature_dim {
        bail!(
            "checkpoint expects {} features, dataset has {}",
            m.feature_dim,
            ds.feature_dim
        );
    }
    let mut body = String::new();
    for (name, split) in [
        ("train", &ds.train),
        ("validation", &ds.validation),
        ("test", &ds.test),
    ] {
        let ndcg = evaluate_ndcg(&m, split, 10);
        let delta = true_delta(&m, split, RankWeight::Dcg);
        let _ = writeln!(body, "{name},{},{ndcg},{delta}", split.len());
    }
    write_text(
        &out.join("eval.csv"),
        &csv(cfg, "split,queries,ndcg10,true_delta_dcg", &body),
    )?;
    eprint!("{body}");
    Ok(())
}
