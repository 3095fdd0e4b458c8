//! Regression EM for the two per-rank click parameters
//! `ζ⁺_k = P(C=1 | R=1, k)` and `ζ⁻_k = P(C=1 | R=0, k)`.
//!
//! The E-step computes relevance posteriors for every logged impression from
//! the current regression model `γ̂` and the current `ζ`, and re-estimates
//! `ζ` from them. The M-step fits the regression model (scores followed by
//! a head activation) to the per-document mean posteriors.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write as _;

use crate::bias::BiasSchedule;
use crate::clicksim::{ClickLog, Impression};
use crate::dataset::Query;
use crate::ranker::{Architecture, Head, ScoringModel};
use crate::train::{train_regression, TrainConfig};
use crate::{Error, Result};

/// Lower/upper clamp for every `ζ`, and the minimum gap `ζ⁺ − ζ⁻`.
pub const ZETA_MARGIN: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct ZetaParams {
    pub zeta_plus: Vec<f64>,
    pub zeta_minus: Vec<f64>,
}

impl ZetaParams {
    /// `ζ⁺_k = 1/√k`, `ζ⁻_k = 0.1/k`, clamped.
    pub fn initial(max_rank: usize) -> Self {
        let mut z = Self {
            zeta_plus: (1..=max_rank).map(|k| 1.0 / libm::sqrt(k as f64)).collect(),
            zeta_minus: (1..=max_rank).map(|k| 0.1 / k as f64).collect(),
        };
        z.clamp();
        z
    }

    /// True values implied by a schedule: `ζ⁺ = α + β`, `ζ⁻ = β`.
    pub fn from_schedule(schedule: &BiasSchedule) -> Self {
        Self {
            zeta_plus: schedule
                .alpha()
                .iter()
                .zip(schedule.beta())
                .map(|(a, b)| a + b)
                .collect(),
            zeta_minus: schedule.beta().to_vec(),
        }
    }

    pub fn max_rank(&self) -> usize {
        self.zeta_plus.len()
    }

    pub fn alpha(&self) -> Vec<f64> {
        self.zeta_plus
            .iter()
            .zip(&self.zeta_minus)
            .map(|(p, m)| p - m)
            .collect()
    }

    pub fn beta(&self) -> Vec<f64> {
        self.zeta_minus.clone()
    }

    /// A schedule with the same `α`, `β` (see [`BiasSchedule::from_click_rates`]).
    pub fn to_schedule(&self) -> Result<BiasSchedule> {
        BiasSchedule::from_click_rates(&self.zeta_plus, &self.zeta_minus)
    }

    /// Clamps into `[m, 1−m]` and projects so that `ζ⁻ ≤ ζ⁺ − m`.
    pub fn clamp(&mut self) {
        let (lo, hi) = (ZETA_MARGIN, 1.0 - ZETA_MARGIN);
        for (p, m) in self.zeta_plus.iter_mut().zip(self.zeta_minus.iter_mut()) {
            *p = p.clamp(lo, hi);
            *m = m.clamp(lo, hi);
            if *m > *p - ZETA_MARGIN {
                let mid = (0.5 * (*p + *m)).clamp(lo + 0.5 * ZETA_MARGIN, hi - 0.5 * ZETA_MARGIN);
                *p = mid + 0.5 * ZETA_MARGIN;
                *m = mid - 0.5 * ZETA_MARGIN;
            }
        }
    }

    pub fn posterior(&self, gamma_hat: f64, clicked: bool, rank: usize) -> Result<f64> {
        if rank == 0 || rank > self.max_rank() {
            return Err(Error::RankOutOfRange {
                rank,
                max_rank: self.max_rank(),
            });
        }
        Ok(posterior_relevance(
            gamma_hat,
            clicked,
            self.zeta_plus[rank - 1],
            self.zeta_minus[rank - 1],
        ))
    }
}

/// `P(R=1 | C, γ̂)` by Bayes' rule under click probabilities `ζ⁺` (relevant)
/// and `ζ⁻` (non-relevant). A zero denominator returns `γ̂` unchanged.
pub fn posterior_relevance(gamma_hat: f64, clicked: bool, zeta_plus: f64, zeta_minus: f64) -> f64 {
    let (rel, non) = if clicked {
        (zeta_plus * gamma_hat, zeta_minus * (1.0 - gamma_hat))
    } else {
        (
            (1.0 - zeta_plus) * gamma_hat,
            (1.0 - zeta_minus) * (1.0 - gamma_hat),
        )
    };
    let denom = rel + non;
    if denom == 0.0 {
        gamma_hat
    } else {
        rel / denom
    }
}

/// `γ̂` per logged query (indexed by doc id) from the model and its head.
fn predict_logged(
    impressions: &[Impression],
    queries: &BTreeMap<u64, &Query>,
    model: &ScoringModel,
) -> Result<BTreeMap<u64, Vec<f64>>> {
    let mut out = BTreeMap::new();
    for imp in impressions {
        if out.contains_key(&imp.query_id) {
            continue;
        }
        let q = queries
            .get(&imp.query_id)
            .ok_or(Error::UnknownQuery(imp.query_id))?;
        let g: Vec<f64> = model
            .predict_query(q)?
            .into_iter()
            .map(|v| v.clamp(0.0, 1.0))
            .collect();
        out.insert(imp.query_id, g);
    }
    Ok(out)
}

fn e_step_inner(
    impressions: &[Impression],
    gamma: &BTreeMap<u64, Vec<f64>>,
    zeta: &ZetaParams,
) -> Result<ZetaParams> {
    let n = zeta.max_rank();
    let mut plus_num = alloc::vec![0.0; n];
    let mut plus_den = alloc::vec![0.0; n];
    let mut minus_num = alloc::vec![0.0; n];
    let mut minus_den = alloc::vec![0.0; n];
    for imp in impressions {
        let g = gamma[&imp.query_id][imp.doc_id];
        let k = imp.rank - 1;
        let clicks = imp.clicks as f64;
        let skips = (imp.impressions - imp.clicks) as f64;
        let r_click = zeta.posterior(g, true, imp.rank)?;
        let r_skip = zeta.posterior(g, false, imp.rank)?;
        plus_num[k] += clicks * r_click;
        plus_den[k] += clicks * r_click + skips * r_skip;
        minus_num[k] += clicks * (1.0 - r_click);
        minus_den[k] += clicks * (1.0 - r_click) + skips * (1.0 - r_skip);
    }
    let mut next = zeta.clone();
    for k in 0..n {
        if plus_den[k] > 0.0 {
            next.zeta_plus[k] = plus_num[k] / plus_den[k];
        }
        if minus_den[k] > 0.0 {
            next.zeta_minus[k] = minus_num[k] / minus_den[k];
        }
    }
    next.clamp();
    Ok(next)
}

/// Re-estimates `ζ` from the log given relevance predictions of `gamma_model`.
pub fn e_step(
    log: &ClickLog,
    queries: &[Query],
    gamma_model: &ScoringModel,
    zeta: &ZetaParams,
) -> Result<ZetaParams> {
    let index = query_index(queries);
    let impressions = log.impressions();
    let gamma = predict_logged(&impressions, &index, gamma_model)?;
    e_step_inner(&impressions, &gamma, zeta)
}

/// `gamma` supplies the prior `γ̂` of the posteriors, per logged query.
fn m_step_inner(
    impressions: &[Impression],
    index: &BTreeMap<u64, &Query>,
    gamma: &BTreeMap<u64, Vec<f64>>,
    zeta: &ZetaParams,
    model: &ScoringModel,
    config: &TrainConfig,
) -> Result<ScoringModel> {
    let mut sums: BTreeMap<u64, Vec<(f64, u64)>> = BTreeMap::new();
    for imp in impressions {
        let g = gamma[&imp.query_id][imp.doc_id];
        let r_click = zeta.posterior(g, true, imp.rank)?;
        let r_skip = zeta.posterior(g, false, imp.rank)?;
        let n_docs = gamma[&imp.query_id].len();
        let e = sums
            .entry(imp.query_id)
            .or_insert_with(|| alloc::vec![(0.0, 0); n_docs]);
        e[imp.doc_id].0 +=
            imp.clicks as f64 * r_click + (imp.impressions - imp.clicks) as f64 * r_skip;
        e[imp.doc_id].1 += imp.impressions;
    }
    let mut queries = Vec::with_capacity(sums.len());
    let mut targets = Vec::with_capacity(sums.len());
    for (qid, docs) in sums {
        queries.push(index[&qid]);
        targets.push(
            docs.into_iter()
                .map(|(s, n)| if n > 0 { Some(s / n as f64) } else { None })
                .collect(),
        );
    }
    Ok(train_regression(&queries, targets, model, config)?.model)
}

/// Fits the regression model to mean relevance posteriors per displayed
/// document, continuing from `model`.
pub fn m_step(
    log: &ClickLog,
    queries: &[Query],
    zeta: &ZetaParams,
    model: &ScoringModel,
    config: &TrainConfig,
) -> Result<ScoringModel> {
    let index = query_index(queries);
    let impressions = log.impressions();
    let gamma = predict_logged(&impressions, &index, model)?;
    m_step_inner(&impressions, &index, &gamma, zeta, model, config)
}

fn query_index(queries: &[Query]) -> BTreeMap<u64, &Query> {
    queries.iter().map(|q| (q.query_id, q)).collect()
}

#[derive(Debug, Clone)]
pub struct EmConfig {
    pub head: Head,
    pub iterations: usize,
    pub architecture: Architecture,
    /// Training settings of each M-step (its `epochs` is the per-iteration budget).
    pub m_step: TrainConfig,
    pub seed: u64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            head: Head::SoftMinMax,
            iterations: 100,
            architecture: Architecture::desk_default(),
            m_step: TrainConfig {
                epochs: 8,
                ..TrainConfig::default()
            },
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EmOutcome {
    pub zeta: ZetaParams,
    pub model: ScoringModel,
    /// `trajectory[0]` is the initialization, `trajectory[i]` the estimate after iteration `i`.
    pub trajectory: Vec<ZetaParams>,
}

/// Alternates M- and E-steps. The first M-step computes posteriors from the
/// initial `ζ` ([`ZetaParams::initial`]) and a flat prior `γ̂ = 0.5`; every
/// later step uses the current regression model's predictions.
pub fn run_em(log: &ClickLog, queries: &[Query], config: &EmConfig) -> Result<EmOutcome> {
    if config.iterations == 0 {
        return Err(Error::InvalidArgument(
            "EM needs at least one iteration".into(),
        ));
    }
    if log.is_empty() {
        return Err(Error::EmptyLog);
    }
    let feature_dim = queries
        .first()
        .and_then(|q| q.documents.first())
        .map(|d| d.features.len())
        .ok_or_else(|| Error::InvalidArgument("no queries".into()))?;
    let max_rank = log
        .sessions
        .iter()
        .map(|s| s.ranking.len())
        .max()
        .unwrap_or(0);
    let index = query_index(queries);
    let impressions = log.impressions();

    let mut model = ScoringModel::new(
        config.architecture.clone(),
        feature_dim,
        config.head,
        config.seed,
    );
    let mut zeta = ZetaParams::initial(max_rank);
    let mut trajectory = alloc::vec![zeta.clone()];
    // Flat prior for the first M-step; afterwards the model's own predictions.
    let mut gamma = BTreeMap::new();
    for imp in &impressions {
        let q = index
            .get(&imp.query_id)
            .ok_or(Error::UnknownQuery(imp.query_id))?;
        gamma.insert(imp.query_id, alloc::vec![0.5; q.len()]);
    }
    for it in 0..config.iterations {
        let m_cfg = TrainConfig {
            seed: config.seed.wrapping_add(1 + it as u64),
            ..config.m_step
        };
        model = m_step_inner(&impressions, &index, &gamma, &zeta, &model, &m_cfg)?;
        gamma = predict_logged(&impressions, &index, &model)?;
        zeta = e_step_inner(&impressions, &gamma, &zeta)?;
        trajectory.push(zeta.clone());
    }
    Ok(EmOutcome {
        zeta,
        model,
        trajectory,
    })
}

/// CSV with columns `iteration,k,zeta_plus,zeta_minus,alpha,beta`.
pub fn trajectory_csv(trajectory: &[ZetaParams]) -> String {
    let mut out = String::from("iteration,k,zeta_plus,zeta_minus,alpha,beta\n");
    for (it, z) in trajectory.iter().enumerate() {
        for k in 0..z.max_rank() {
            let (p, m) = (z.zeta_plus[k], z.zeta_minus[k]);
            let _ = writeln!(out, "{},{},{},{},{},{}", it, k + 1, p, m, p - m, m);
        }
    }
    out
}
