use cltr_core::clicksim::simulate_log;
use cltr_core::em::{e_step, m_step, run_em};
use cltr_core::{
    Architecture, BiasSchedule, BudgetUnit, Document, EmConfig, Head, Query, ScoringModel,
    TrainConfig, ZetaParams,
};

/// Queries whose single feature is the document's true relevance, so the
/// linear model `x ↦ x` predicts `γ` exactly.
fn relevance_feature_queries(n: usize, docs: usize) -> Vec<Query> {
    (0..n)
        .map(|q| Query {
            query_id: q as u64,
            documents: (0..docs)
                .map(|d| {
                    let grade = if (q * 7 + d * 3) % 5 < 2 { 4 } else { 0 };
                    let x = if grade > 2 { 1.0 } else { 0.0 };
                    Document::new(d, vec![x], grade).unwrap()
                })
                .collect(),
        })
        .collect()
}

fn identity_model() -> ScoringModel {
    ScoringModel::with_params(Architecture::Linear, 1, Head::None, vec![1.0, 0.0]).unwrap()
}

#[test]
fn e_step_with_true_relevance_recovers_click_rates() {
    let queries = relevance_feature_queries(50, 10);
    let truth = BiasSchedule::standard(1.0, 0.65, 10).unwrap();
    // A constant scorer displays documents in id order; the relevance pattern
    // varies by query, so both classes reach every rank.
    let production =
        ScoringModel::with_params(Architecture::Linear, 1, Head::None, vec![0.0, 0.0]).unwrap();
    let log = simulate_log(
        &queries,
        &production,
        &truth,
        100_000,
        BudgetUnit::Sessions,
        3,
    )
    .unwrap();

    let est = e_step(&log, &queries, &identity_model(), &ZetaParams::initial(10)).unwrap();
    let want = ZetaParams::from_schedule(&truth);

    // [impressions, clicks] per rank for relevant and non-relevant documents.
    let mut rel = [[0.0f64; 2]; 10];
    let mut non = [[0.0f64; 2]; 10];
    for s in &log.sessions {
        let q = &queries[s.query_id as usize];
        for (d, rank, c) in s.displayed() {
            let cell = if q.documents[d].binary_label == 1 {
                &mut rel
            } else {
                &mut non
            };
            cell[rank - 1][0] += 1.0;
            cell[rank - 1][1] += f64::from(u8::from(c));
        }
    }
    for k in 0..10 {
        // With exact posteriors the E-step reduces to per-class click rates.
        assert!((est.zeta_plus[k] - rel[k][1] / rel[k][0]).abs() < 1e-12);
        assert!((est.zeta_minus[k] - non[k][1] / non[k][0]).abs() < 1e-12);
        // 20 comparisons, so a Bonferroni-style 3.5 standard errors.
        let (p, m) = (want.zeta_plus[k], want.zeta_minus[k]);
        let se_p = (p * (1.0 - p) / rel[k][0]).sqrt();
        let se_m = (m * (1.0 - m) / non[k][0]).sqrt();
        assert!(
            (est.zeta_plus[k] - p).abs() <= 3.5 * se_p,
            "rank {}: {} vs {p}",
            k + 1,
            est.zeta_plus[k]
        );
        assert!(
            (est.zeta_minus[k] - m).abs() <= 3.5 * se_m,
            "rank {}: {} vs {m}",
            k + 1,
            est.zeta_minus[k]
        );
    }
}

fn small_em_setup() -> (Vec<Query>, cltr_core::ClickLog) {
    let queries = relevance_feature_queries(30, 6);
    let truth = BiasSchedule::standard(1.0, 0.65, 6).unwrap();
    let production = identity_model();
    let log = simulate_log(&queries, &production, &truth, 2_000, BudgetUnit::Clicks, 5).unwrap();
    (queries, log)
}

fn small_em_config(iterations: usize) -> EmConfig {
    EmConfig {
        iterations,
        architecture: Architecture::Mlp(vec![4]),
        m_step: TrainConfig {
            epochs: 2,
            ..TrainConfig::default()
        },
        seed: 11,
        ..EmConfig::default()
    }
}

#[test]
fn one_iteration_records_two_trajectory_points() {
    let (queries, log) = small_em_setup();
    let out = run_em(&log, &queries, &small_em_config(1)).unwrap();
    assert_eq!(out.trajectory.len(), 2);
    assert_eq!(out.trajectory[0], ZetaParams::initial(6));
    assert_eq!(out.trajectory[1], out.zeta);
}

#[test]
fn run_em_is_deterministic_and_keeps_order() {
    let (queries, log) = small_em_setup();
    let a = run_em(&log, &queries, &small_em_config(3)).unwrap();
    let b = run_em(&log, &queries, &small_em_config(3)).unwrap();
    assert_eq!(a.zeta, b.zeta);
    assert_eq!(a.model.params, b.model.params);
    for z in &a.trajectory {
        for k in 0..z.max_rank() {
            assert!(z.zeta_minus[k] < z.zeta_plus[k]);
            assert!(z.zeta_minus[k] > 0.0 && z.zeta_plus[k] < 1.0);
        }
    }
}

#[test]
fn zero_iterations_is_rejected() {
    let (queries, log) = small_em_setup();
    assert!(run_em(&log, &queries, &small_em_config(0)).is_err());
}

#[test]
fn m_step_moves_toward_posteriors() {
    let (queries, log) = small_em_setup();
    let start = ScoringModel::new(Architecture::Linear, 1, Head::Sigmoid, 2);
    let zeta = ZetaParams::from_schedule(&BiasSchedule::standard(1.0, 0.65, 6).unwrap());
    let cfg = TrainConfig {
        epochs: 20,
        learning_rate: 0.1,
        ..TrainConfig::default()
    };
    let fitted = m_step(&log, &queries, &zeta, &start, &cfg).unwrap();
    // Relevant documents (feature 1) must end up scored above non-relevant ones.
    let rel = fitted.score(&[1.0]).unwrap();
    let non = fitted.score(&[0.0]).unwrap();
    assert!(rel > non, "{rel} <= {non}");
    assert_eq!(m_step(&log, &queries, &zeta, &start, &cfg).unwrap(), fitted);
}
