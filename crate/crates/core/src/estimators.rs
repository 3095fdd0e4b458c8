//! Click-based metric estimators: naive, IPS, Bayes-IPS and affine.
//!
//! Every estimator has the form `(1/N) Σ_i Σ_{(d,k)∈y_i} w(c_i(d), k)·λ(d|q_i,f)`
//! and differs only in the per-impression correction weight `w`:
//!
//! | kind      | weight                       |
//! |-----------|------------------------------|
//! | naive     | `c`                          |
//! | ips       | `c / θ_k`                    |
//! | bayes-ips | `c·ε⁺_k/(ε⁺_k+ε⁻_k) / θ_k`   |
//! | affine    | `(c − β_k) / α_k`            |
//!
//! The affine weight is the only one that is nonzero for unclicked items.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write as _;

use crate::bias::BiasSchedule;
use crate::clicksim::ClickLog;
use crate::dataset::Query;
use crate::metrics::{ranks_of, RankWeight};
use crate::ranker::{rank_by_scores, ScoringModel};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EstimatorKind {
    Naive,
    Ips,
    BayesIps,
    Affine,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 4] = [
        EstimatorKind::Naive,
        EstimatorKind::Ips,
        EstimatorKind::BayesIps,
        EstimatorKind::Affine,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Naive => "naive",
            EstimatorKind::Ips => "ips",
            EstimatorKind::BayesIps => "bayes-ips",
            EstimatorKind::Affine => "affine",
        }
    }
}

impl core::fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

impl core::str::FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "naive" => Ok(EstimatorKind::Naive),
            "ips" => Ok(EstimatorKind::Ips),
            "bayes-ips" | "bayes_ips" => Ok(EstimatorKind::BayesIps),
            "affine" => Ok(EstimatorKind::Affine),
            other => Err(Error::InvalidArgument(format!(
                "unknown estimator `{other}`"
            ))),
        }
    }
}

/// An estimator kind plus an optional symmetric clip on `|weight|`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimator {
    pub kind: EstimatorKind,
    pub clip: Option<f64>,
}

impl From<EstimatorKind> for Estimator {
    fn from(kind: EstimatorKind) -> Self {
        Estimator { kind, clip: None }
    }
}

impl Estimator {
    pub fn weight(&self, clicked: bool, rank: usize, schedule: &BiasSchedule) -> Result<f64> {
        let w = correction_weight(self.kind, clicked, rank, schedule)?;
        Ok(match self.clip {
            Some(c) => w.clamp(-c, c),
            None => w,
        })
    }

    /// Summed weights per `(query, doc)` over the whole log.
    pub fn weight_table(&self, log: &ClickLog, schedule: &BiasSchedule) -> Result<WeightTable> {
        if log.is_empty() {
            return Err(Error::EmptyLog);
        }
        let mut sums: BTreeMap<u64, Vec<(usize, f64)>> = BTreeMap::new();
        let mut impressions: BTreeMap<(u64, usize), (f64, u64)> = BTreeMap::new();
        let mut cache: BTreeMap<(usize, bool), f64> = BTreeMap::new();
        let mut w_at = |clicked: bool, rank: usize| -> Result<f64> {
            if let Some(w) = cache.get(&(rank, clicked)) {
                return Ok(*w);
            }
            let w = self.weight(clicked, rank, schedule)?;
            cache.insert((rank, clicked), w);
            Ok(w)
        };
        for imp in log.impressions() {
            let clicked = imp.clicks as f64;
            let skipped = (imp.impressions - imp.clicks) as f64;
            let mut total = 0.0;
            if imp.clicks > 0 {
                total += clicked * w_at(true, imp.rank)?;
            }
            if imp.impressions > imp.clicks {
                total += skipped * w_at(false, imp.rank)?;
            }
            let e = impressions
                .entry((imp.query_id, imp.doc_id))
                .or_insert((0.0, 0));
            e.0 += total;
            e.1 += imp.impressions;
        }
        for ((q, d), (w, _)) in &impressions {
            sums.entry(*q).or_default().push((*d, *w));
        }
        Ok(WeightTable {
            per_query: sums,
            per_doc: impressions,
            n_sessions: log.len(),
        })
    }

    pub fn pseudo_labels(&self, log: &ClickLog, schedule: &BiasSchedule) -> Result<PseudoLabels> {
        let table = self.weight_table(log, schedule)?;
        let labels = table
            .per_doc
            .iter()
            .map(|(&key, &(w, n))| {
                (
                    key,
                    PseudoLabel {
                        gamma_hat: w / n as f64,
                        impressions: n,
                    },
                )
            })
            .collect();
        Ok(PseudoLabels { labels })
    }
}

/// Per-impression correction weight for a click (or skip) observed at `rank`.
pub fn correction_weight(
    kind: EstimatorKind,
    clicked: bool,
    rank: usize,
    schedule: &BiasSchedule,
) -> Result<f64> {
    let (theta, eps_plus, eps_minus) = schedule.params_at(rank)?;
    let (alpha, beta) = schedule.affine_at(rank)?;
    let c = if clicked { 1.0 } else { 0.0 };
    if kind != EstimatorKind::Naive && theta == 0.0 {
        return Err(Error::ZeroPropensity(rank));
    }
    Ok(match kind {
        EstimatorKind::Naive => c,
        EstimatorKind::Ips => c / theta,
        EstimatorKind::BayesIps => {
            let denom = eps_plus + eps_minus;
            if denom == 0.0 {
                0.0
            } else {
                c * (eps_plus / denom) / theta
            }
        }
        EstimatorKind::Affine => {
            if alpha == 0.0 {
                return Err(Error::UncorrectableRank(rank));
            }
            (c - beta) / alpha
        }
    })
}

/// Summed correction weights per `(query, doc)`; evaluates the estimator for
/// any ranker without revisiting the log.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightTable {
    per_query: BTreeMap<u64, Vec<(usize, f64)>>,
    per_doc: BTreeMap<(u64, usize), (f64, u64)>,
    n_sessions: usize,
}

impl WeightTable {
    pub fn n_sessions(&self) -> usize {
        self.n_sessions
    }

    /// `(1/N) Σ_q Σ_d W_{q,d}·λ(rank_f(d))` where `ranks(q)` gives the
    /// evaluated ranker's 1-based rank per doc id of query `q`.
    pub fn estimate<F>(&self, mut ranks: F, weight: RankWeight) -> Result<f64>
    where
        F: FnMut(u64) -> Option<Vec<usize>>,
    {
        let mut total = 0.0;
        for (&q, docs) in &self.per_query {
            let r = ranks(q).ok_or(Error::UnknownQuery(q))?;
            for &(d, w) in docs {
                let rank = *r.get(d).ok_or(Error::UnknownQuery(q))?;
                total += w * weight.weight(rank);
            }
        }
        Ok(total / self.n_sessions as f64)
    }

    /// Estimate for a scoring model over the given queries.
    pub fn estimate_model(
        &self,
        model: &ScoringModel,
        queries: &[Query],
        weight: RankWeight,
    ) -> Result<f64> {
        let index: BTreeMap<u64, &Query> = queries.iter().map(|q| (q.query_id, q)).collect();
        self.estimate(
            |qid| {
                let q = index.get(&qid)?;
                let scores = model.score_query(q).ok()?;
                Some(ranks_of(&rank_by_scores(&scores)))
            },
            weight,
        )
    }
}

/// `Δ̂(f)` of a scoring model: the log supplies display ranks (for the
/// correction weights) and the model supplies evaluation ranks (for `λ`).
pub fn estimate_delta(
    kind: EstimatorKind,
    log: &ClickLog,
    schedule: &BiasSchedule,
    queries: &[Query],
    model: &ScoringModel,
    weight: RankWeight,
) -> Result<f64> {
    Estimator::from(kind)
        .weight_table(log, schedule)?
        .estimate_model(model, queries, weight)
}

/// `Δ̂` for explicitly given evaluated rankings (`order` per query id).
pub fn estimate_delta_for_orders(
    kind: EstimatorKind,
    log: &ClickLog,
    schedule: &BiasSchedule,
    orders: &BTreeMap<u64, Vec<usize>>,
    weight: RankWeight,
) -> Result<f64> {
    Estimator::from(kind)
        .weight_table(log, schedule)?
        .estimate(|q| orders.get(&q).map(|o| ranks_of(o)), weight)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PseudoLabel {
    pub gamma_hat: f64,
    pub impressions: u64,
}

/// Mean correction weight per displayed `(query, doc)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PseudoLabels {
    labels: BTreeMap<(u64, usize), PseudoLabel>,
}

impl PseudoLabels {
    pub fn get(&self, query_id: u64, doc_id: usize) -> Option<PseudoLabel> {
        self.labels.get(&(query_id, doc_id)).copied()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = ((u64, usize), PseudoLabel)> + '_ {
        self.labels.iter().map(|(k, v)| (*k, *v))
    }

    /// Labels for every document of `query`; never-displayed documents get 0.
    /// Returns the labels and how many documents were missing.
    pub fn labels_for(&self, query: &Query) -> (Vec<f64>, usize) {
        let mut missing = 0;
        let labels = query
            .documents
            .iter()
            .map(|d| match self.get(query.query_id, d.doc_id) {
                Some(l) => l.gamma_hat,
                None => {
                    missing += 1;
                    0.0
                }
            })
            .collect();
        (labels, missing)
    }

    /// Exact labels taken from the dataset's binary relevance, one impression each.
    pub fn from_true_labels(queries: &[Query]) -> Self {
        let mut labels = BTreeMap::new();
        for q in queries {
            for d in &q.documents {
                labels.insert(
                    (q.query_id, d.doc_id),
                    PseudoLabel {
                        gamma_hat: d.gamma(),
                        impressions: 1,
                    },
                );
            }
        }
        Self { labels }
    }

    /// CSV with columns `qid,docid,impressions,gamma_hat`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("qid,docid,impressions,gamma_hat\n");
        for ((q, d), l) in &self.labels {
            let _ = writeln!(out, "{},{},{},{}", q, d, l.impressions, l.gamma_hat);
        }
        out
    }
}

pub fn aggregate_pseudo_labels(
    kind: EstimatorKind,
    log: &ClickLog,
    schedule: &BiasSchedule,
) -> Result<PseudoLabels> {
    Estimator::from(kind).pseudo_labels(log, schedule)
}

/// Weight table for the identity "estimator" used when a dataset's true
/// labels are known: `W_{q,d} = γ_{q,d}` with one pseudo-session per query,
/// so `estimate` returns the true metric.
pub fn true_weight_table(queries: &[Query]) -> WeightTable {
    let mut per_query = BTreeMap::new();
    let mut per_doc = BTreeMap::new();
    for q in queries {
        let docs: Vec<(usize, f64)> = q.documents.iter().map(|d| (d.doc_id, d.gamma())).collect();
        for &(d, g) in &docs {
            per_doc.insert((q.query_id, d), (g, 1));
        }
        per_query.insert(q.query_id, docs);
    }
    WeightTable {
        per_query,
        per_doc,
        n_sessions: queries.len().max(1),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clicksim::{BudgetUnit, Session};
    use crate::ranker::Ranking;
    use alloc::sync::Arc;

    fn standard() -> BiasSchedule {
        BiasSchedule::standard(1.0, 0.65, 10).unwrap()
    }

    #[test]
    fn weights_by_kind() {
        let s = standard();
        let w = |k, c, r| correction_weight(k, c, r, &s).unwrap();
        assert!((w(EstimatorKind::Affine, true, 1) - 1.060_606_060_606).abs() < 1e-9);
        assert!((w(EstimatorKind::Affine, false, 1) + 1.969_696_969_697).abs() < 1e-9);
        assert_eq!(w(EstimatorKind::Ips, true, 2), 2.0);
        assert_eq!(w(EstimatorKind::Ips, false, 2), 0.0);
        assert!((w(EstimatorKind::BayesIps, true, 1) - 0.98 / 1.63).abs() < 1e-12);
        assert!((w(EstimatorKind::BayesIps, true, 1) - 0.60123).abs() < 1e-5);
        assert_eq!(w(EstimatorKind::Naive, true, 7), 1.0);
        assert_eq!(w(EstimatorKind::Naive, false, 7), 0.0);
    }

    #[test]
    fn degenerate_ranks_are_errors() {
        let s = BiasSchedule::new_unchecked(
            alloc::vec![1.0, 0.0],
            alloc::vec![0.5, 0.9],
            alloc::vec![0.5, 0.1],
        )
        .unwrap();
        assert_eq!(
            correction_weight(EstimatorKind::Affine, true, 1, &s),
            Err(Error::UncorrectableRank(1))
        );
        assert_eq!(
            correction_weight(EstimatorKind::Ips, true, 2, &s),
            Err(Error::ZeroPropensity(2))
        );
        assert!(correction_weight(EstimatorKind::Naive, true, 2, &s).is_ok());
        assert!(correction_weight(EstimatorKind::Ips, true, 3, &s).is_err());
    }

    #[test]
    fn affine_weight_is_affine_in_click() {
        let s = standard();
        for rank in 1..=10 {
            let (a, b) = s.affine_at(rank).unwrap();
            let w0 = correction_weight(EstimatorKind::Affine, false, rank, &s).unwrap();
            let w1 = correction_weight(EstimatorKind::Affine, true, rank, &s).unwrap();
            assert!((w1 - w0 - 1.0 / a).abs() < 1e-12);
            assert!((w0 + b / a).abs() < 1e-12);
        }
    }

    fn log_of(sessions: &[(u64, &[usize], &[bool])], schedule: BiasSchedule) -> ClickLog {
        ClickLog {
            sessions: sessions
                .iter()
                .enumerate()
                .map(|(i, (q, order, clicks))| Session {
                    session_id: i as u64,
                    query_id: *q,
                    ranking: Arc::new(Ranking {
                        query_id: *q,
                        order: order.to_vec(),
                    }),
                    clicks: clicks.to_vec(),
                })
                .collect(),
            schedule,
            seed: 0,
            budget: sessions.len() as u64,
            unit: BudgetUnit::Sessions,
        }
    }

    #[test]
    fn naive_mean_pseudo_label() {
        let log = log_of(
            &[(3, &[0, 1], &[true, false]), (3, &[0, 1], &[false, false])],
            standard(),
        );
        let p = aggregate_pseudo_labels(EstimatorKind::Naive, &log, &standard()).unwrap();
        assert_eq!(p.get(3, 0).unwrap().gamma_hat, 0.5);
        assert_eq!(p.get(3, 0).unwrap().impressions, 2);
        assert_eq!(p.get(3, 1).unwrap().gamma_hat, 0.0);
        assert!(p
            .to_csv()
            .starts_with("qid,docid,impressions,gamma_hat\n3,0,2,0.5\n"));
    }

    #[test]
    fn empty_log_is_error() {
        let log = log_of(&[], standard());
        let mut orders = BTreeMap::new();
        orders.insert(0, alloc::vec![0]);
        assert_eq!(
            estimate_delta_for_orders(
                EstimatorKind::Naive,
                &log,
                &standard(),
                &orders,
                RankWeight::Dcg
            ),
            Err(Error::EmptyLog)
        );
    }

    #[test]
    fn no_clicks_naive_is_zero() {
        let log = log_of(&[(1, &[1, 0], &[false, false])], standard());
        let mut orders = BTreeMap::new();
        orders.insert(1, alloc::vec![0, 1]);
        let v = estimate_delta_for_orders(
            EstimatorKind::Naive,
            &log,
            &standard(),
            &orders,
            RankWeight::Dcg,
        )
        .unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn evaluated_ranks_drive_lambda() {
        // One click on doc 1 displayed at rank 2; evaluated ranking puts doc 1 first.
        let log = log_of(&[(1, &[0, 1], &[false, true])], standard());
        let mut orders = BTreeMap::new();
        orders.insert(1, alloc::vec![1, 0]);
        let v = estimate_delta_for_orders(
            EstimatorKind::Ips,
            &log,
            &standard(),
            &orders,
            RankWeight::Dcg,
        )
        .unwrap();
        assert!((v - 2.0).abs() < 1e-12);
        orders.insert(1, alloc::vec![0, 1]);
        let v = estimate_delta_for_orders(
            EstimatorKind::Ips,
            &log,
            &standard(),
            &orders,
            RankWeight::Dcg,
        )
        .unwrap();
        assert!((v - 2.0 / libm::log2(3.0)).abs() < 1e-12);
    }

    #[test]
    fn unknown_query_is_error() {
        let log = log_of(&[(1, &[0], &[true])], standard());
        let orders = BTreeMap::new();
        assert_eq!(
            estimate_delta_for_orders(
                EstimatorKind::Ips,
                &log,
                &standard(),
                &orders,
                RankWeight::Dcg
            ),
            Err(Error::UnknownQuery(1))
        );
    }

    #[test]
    fn clipping_is_symmetric() {
        let s = standard();
        let e = Estimator {
            kind: EstimatorKind::Affine,
            clip: Some(1.5),
        };
        assert_eq!(e.weight(false, 1, &s).unwrap(), -1.5);
        assert!((e.weight(true, 1, &s).unwrap() - 1.060_606).abs() < 1e-6);
    }
}
