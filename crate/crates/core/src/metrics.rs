//! Rank-weight functions and the evaluation metrics built on them.

use alloc::vec;
use alloc::vec::Vec;

use crate::dataset::Query;
use crate::ranker::{rank_query, ScoringModel};

/// Per-rank metric weight `λ(rank)`; ranks are 1-based.
#[derive(Debug, Clone, Copy, Default)]
pub enum RankWeight {
    /// `1 / log2(rank + 1)` at every rank.
    #[default]
    Dcg,
    /// DCG weight truncated to the top `k` ranks.
    DcgAt(usize),
    /// 1 for the top `k` ranks, 0 below.
    TopK(usize),
    Custom(fn(usize) -> f64),
}

impl RankWeight {
    pub fn weight(&self, rank: usize) -> f64 {
        match *self {
            RankWeight::Dcg => dcg_weight(rank),
            RankWeight::DcgAt(k) if rank <= k => dcg_weight(rank),
            RankWeight::DcgAt(_) => 0.0,
            RankWeight::TopK(k) => {
                if rank <= k {
                    1.0
                } else {
                    0.0
                }
            }
            RankWeight::Custom(f) => f(rank),
        }
    }
}

pub fn dcg_weight(rank: usize) -> f64 {
    1.0 / libm::log2(rank as f64 + 1.0)
}

/// Inverts a ranking: `ranks[doc] = position + 1`.
pub fn ranks_of(order: &[usize]) -> Vec<usize> {
    let mut ranks = vec![0; order.len()];
    for (pos, &doc) in order.iter().enumerate() {
        ranks[doc] = pos + 1;
    }
    ranks
}

/// nDCG@k of a list of gains given in displayed order. A list without any
/// positive gain scores 1.0.
pub fn ndcg_at_k(gains_in_order: &[f64], k: usize) -> f64 {
    let dcg: f64 = gains_in_order
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, g)| g * dcg_weight(i + 1))
        .sum();
    let mut ideal: Vec<f64> = gains_in_order.to_vec();
    ideal.sort_by(|a, b| b.total_cmp(a));
    let idcg: f64 = ideal
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, g)| g * dcg_weight(i + 1))
        .sum();
    if idcg <= 0.0 {
        1.0
    } else {
        dcg / idcg
    }
}

/// Mean nDCG@k of `model` over `queries`, with binary labels as gains.
pub fn evaluate_ndcg(model: &ScoringModel, queries: &[Query], k: usize) -> f64 {
    if queries.is_empty() {
        return 0.0;
    }
    let total: f64 = queries
        .iter()
        .map(|q| {
            let ranking = rank_query(model, q);
            let gains: Vec<f64> = ranking
                .order
                .iter()
                .map(|&d| q.documents[d].gamma())
                .collect();
            ndcg_at_k(&gains, k)
        })
        .sum();
    total / queries.len() as f64
}

/// The linearly decomposable metric `Σ_q P(q) Σ_d γ_{q,d} λ(d | q, f)` with
/// uniform `P(q)` over `queries`.
pub fn true_delta(model: &ScoringModel, queries: &[Query], weight: RankWeight) -> f64 {
    if queries.is_empty() {
        return 0.0;
    }
    let total: f64 = queries
        .iter()
        .map(|q| {
            let ranking = rank_query(model, q);
            ranking
                .order
                .iter()
                .enumerate()
                .map(|(pos, &d)| q.documents[d].gamma() * weight.weight(pos + 1))
                .sum::<f64>()
        })
        .sum();
    total / queries.len() as f64
}
