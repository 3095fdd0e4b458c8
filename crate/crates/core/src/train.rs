//! Lambda-gradient training of scoring models with AdaGrad.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::seq::SliceRandom;

use crate::dataset::Query;
use crate::estimators::{PseudoLabels, WeightTable};
use crate::metrics::{evaluate_ndcg, ranks_of, RankWeight};
use crate::ranker::{rank_by_scores, ScoringModel, Trace};
use crate::{rng_from_seed, Error, Result, Rng};

#[derive(Debug, Clone, Copy)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Sharpness of the pairwise logistic.
    pub sigma: f64,
    pub seed: u64,
    pub adagrad_eps: f64,
    /// Dropout probability on the last two hidden layers; 0 disables it.
    pub dropout: f64,
    /// Metric whose rank weights drive the lambda gradients.
    pub weight: RankWeight,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.02,
            epochs: 32,
            sigma: 1.0,
            seed: 0,
            adagrad_eps: 1e-8,
            dropout: 0.0,
            weight: RankWeight::Dcg,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !(self.sigma > 0.0) {
            return Err(Error::InvalidArgument(
                "learning_rate and sigma must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidArgument("dropout must lie in [0,1)".into()));
        }
        Ok(())
    }
}

/// AdaGrad with a per-parameter squared-gradient accumulator.
#[derive(Debug, Clone)]
pub struct AdaGrad {
    learning_rate: f64,
    eps: f64,
    accum: Vec<f64>,
}

impl AdaGrad {
    pub fn new(n_params: usize, learning_rate: f64, eps: f64) -> Self {
        Self {
            learning_rate,
            eps,
            accum: vec![0.0; n_params],
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        for ((p, g), a) in params.iter_mut().zip(grad).zip(self.accum.iter_mut()) {
            if *g == 0.0 {
                continue;
            }
            *a += g * g;
            *p -= self.learning_rate * g / (libm::sqrt(*a) + self.eps);
        }
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + libm::log1p(libm::exp(-x))
    } else {
        libm::log1p(libm::exp(x))
    }
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// Pairwise logistic loss `Σ_{l_i>l_j} (l_i−l_j)·|λ(r_i)−λ(r_j)|·log(1+e^{−σ(s_i−s_j)})`
/// with the ranks `r` held fixed.
pub fn pairwise_loss(
    scores: &[f64],
    labels: &[f64],
    ranks: &[usize],
    sigma: f64,
    weight: RankWeight,
) -> f64 {
    let mut loss = 0.0;
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if labels[i] > labels[j] {
                let delta = libm::fabs(weight.weight(ranks[i]) - weight.weight(ranks[j]));
                if delta == 0.0 {
                    continue;
                }
                loss +=
                    (labels[i] - labels[j]) * delta * softplus(-sigma * (scores[i] - scores[j]));
            }
        }
    }
    loss
}

/// `∂loss/∂score` of [`pairwise_loss`] at the ranks induced by `scores`
/// (descending score, ties by index).
pub fn lambda_gradients(
    scores: &[f64],
    labels: &[f64],
    sigma: f64,
    weight: RankWeight,
) -> Vec<f64> {
    let ranks = ranks_of(&rank_by_scores(scores));
    lambda_gradients_at(scores, labels, &ranks, sigma, weight).1
}

fn lambda_gradients_at(
    scores: &[f64],
    labels: &[f64],
    ranks: &[usize],
    sigma: f64,
    weight: RankWeight,
) -> (f64, Vec<f64>) {
    let n = scores.len();
    let w: Vec<f64> = ranks.iter().map(|&r| weight.weight(r)).collect();
    let mut grad = vec![0.0; n];
    let mut loss = 0.0;
    for i in 0..n {
        for j in 0..n {
            if labels[i] <= labels[j] {
                continue;
            }
            let delta = libm::fabs(w[i] - w[j]);
            if delta == 0.0 {
                continue;
            }
            let pair = (labels[i] - labels[j]) * delta;
            let diff = sigma * (scores[i] - scores[j]);
            loss += pair * softplus(-diff);
            let lambda = pair * sigma * logistic(-diff);
            grad[i] -= lambda;
            grad[j] += lambda;
        }
    }
    (loss, grad)
}

/// Loss and parameter gradient of [`pairwise_loss`] for one query, ranks
/// taken from the model's current scores.
pub fn pairwise_loss_and_grad(
    model: &ScoringModel,
    query: &Query,
    labels: &[f64],
    sigma: f64,
    weight: RankWeight,
) -> Result<(f64, Vec<f64>)> {
    let traces = query
        .documents
        .iter()
        .map(|d| {
            model.score(&d.features)?;
            Ok(model.forward(&d.features, None))
        })
        .collect::<Result<Vec<_>>>()?;
    let scores: Vec<f64> = traces.iter().map(|t| t.0).collect();
    let ranks = ranks_of(&rank_by_scores(&scores));
    let (loss, dscores) = lambda_gradients_at(&scores, labels, &ranks, sigma, weight);
    let mut grad = vec![0.0; model.num_params()];
    for ((_, trace), g) in traces.iter().zip(&dscores) {
        model.backward(trace, *g, &mut grad);
    }
    Ok((loss, grad))
}

/// Objective on one query: given raw scores, returns the loss and `∂loss/∂score`.
pub(crate) trait QueryObjective {
    fn eval(&self, query_index: usize, scores: &[f64]) -> (f64, Vec<f64>);
}

/// Monitored quantities for model selection and the per-epoch trace.
#[derive(Debug, Clone, Default)]
pub struct Monitor<'a> {
    /// Selection criterion: the estimator's `Δ̂` on held-out queries.
    pub validation: Option<(&'a WeightTable, &'a [Query])>,
    /// Oracle-only test nDCG@10 (needs true labels).
    pub test: Option<&'a [Query]>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// `None` on intermediate epochs of fits that only track the endpoints.
    pub train_loss: Option<f64>,
    pub validation_delta_hat: Option<f64>,
    pub test_ndcg10: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the selected epoch (best validation, else the last).
    pub model: ScoringModel,
    pub best_epoch: usize,
    pub trace: Vec<EpochRecord>,
    /// Documents without a pseudo-label that were trained with label 0.
    pub missing_labels: usize,
}

/// Runs `config.epochs` passes over `queries` in seeded shuffled order,
/// applying one AdaGrad step per query. Epoch 0 in the trace is the
/// initial model. With `loss_every_epoch` off the training loss is only
/// evaluated at the first and last epoch.
pub(crate) fn fit(
    template: &ScoringModel,
    queries: &[&Query],
    config: &TrainConfig,
    objective: &dyn QueryObjective,
    monitor: &Monitor<'_>,
    loss_every_epoch: bool,
) -> Result<TrainOutcome> {
    config.validate()?;
    for q in queries {
        for d in &q.documents {
            if d.features.len() != template.feature_dim {
                return Err(Error::DimensionMismatch {
                    expected: template.feature_dim,
                    got: d.features.len(),
                });
            }
        }
    }
    let mut model = template.clone();
    let mut opt = AdaGrad::new(model.num_params(), config.learning_rate, config.adagrad_eps);
    let mut rng = rng_from_seed(config.seed);
    let mut order: Vec<usize> = (0..queries.len()).collect();
    let mut grad = vec![0.0; model.num_params()];
    let mut traces: Vec<Trace> = Vec::new();

    let mut trace = Vec::with_capacity(config.epochs + 1);
    let mut best: Option<(f64, usize, Vec<f64>)> = None;
    let mut record =
        |epoch: usize, model: &ScoringModel, trace: &mut Vec<EpochRecord>| -> Result<()> {
            let mut train_loss = None;
            if loss_every_epoch || epoch == 0 || epoch == config.epochs {
                let mut sum = 0.0;
                for (i, q) in queries.iter().enumerate() {
                    sum += objective.eval(i, &model.score_query(q)?).0;
                }
                train_loss = Some(sum);
            }
            let validation = match monitor.validation {
                Some((table, vq)) => Some(table.estimate_model(model, vq, config.weight)?),
                None => None,
            };
            let test = monitor.test.map(|tq| evaluate_ndcg(model, tq, 10));
            if let Some(v) = validation {
                if best.as_ref().is_none_or(|(b, _, _)| v > *b) {
                    best = Some((v, epoch, model.params.clone()));
                }
            }
            trace.push(EpochRecord {
                epoch,
                train_loss,
                validation_delta_hat: validation,
                test_ndcg10: test,
            });
            Ok(())
        };

    record(0, &model, &mut trace)?;
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        for &qi in &order {
            let q = queries[qi];
            traces.clear();
            let mut scores = Vec::with_capacity(q.len());
            for d in &q.documents {
                let dropout = if config.dropout > 0.0 {
                    Some((config.dropout, &mut rng as &mut Rng))
                } else {
                    None
                };
                let (s, t) = model.forward(&d.features, dropout);
                scores.push(s);
                traces.push(t);
            }
            let (_, dscores) = objective.eval(qi, &scores);
            if dscores.iter().all(|g| *g == 0.0) {
                continue;
            }
            grad.iter_mut().for_each(|g| *g = 0.0);
            for (t, g) in traces.iter().zip(&dscores) {
                if *g != 0.0 {
                    model.backward(t, *g, &mut grad);
                }
            }
            opt.step(&mut model.params, &grad);
        }
        record(epoch, &model, &mut trace)?;
    }

    let best_epoch = match best {
        Some((_, epoch, params)) => {
            model.params = params;
            epoch
        }
        None => config.epochs,
    };
    Ok(TrainOutcome {
        model,
        best_epoch,
        trace,
        missing_labels: 0,
    })
}

struct LambdaObjective {
    labels: Vec<Vec<f64>>,
    sigma: f64,
    weight: RankWeight,
}

impl QueryObjective for LambdaObjective {
    fn eval(&self, query_index: usize, scores: &[f64]) -> (f64, Vec<f64>) {
        let labels = &self.labels[query_index];
        if scores.len() < 2 {
            return (0.0, vec![0.0; scores.len()]);
        }
        let ranks = ranks_of(&rank_by_scores(scores));
        lambda_gradients_at(scores, labels, &ranks, self.sigma, self.weight)
    }
}

/// Trains against pseudo-labels derived from a click estimator.
/// Documents never displayed in the log get label 0.
pub fn train_counterfactual(
    queries: &[Query],
    pseudo: &PseudoLabels,
    template: &ScoringModel,
    config: &TrainConfig,
    monitor: &Monitor<'_>,
) -> Result<TrainOutcome> {
    let mut missing = 0;
    let labels = queries
        .iter()
        .map(|q| {
            let (l, m) = pseudo.labels_for(q);
            missing += m;
            l
        })
        .collect();
    let objective = LambdaObjective {
        labels,
        sigma: config.sigma,
        weight: config.weight,
    };
    let refs: Vec<&Query> = queries.iter().collect();
    let mut out = fit(template, &refs, config, &objective, monitor, true)?;
    out.missing_labels = missing;
    Ok(out)
}

/// Supervised training on the true binary relevance labels.
pub fn train_full_info(
    queries: &[Query],
    template: &ScoringModel,
    config: &TrainConfig,
    monitor: &Monitor<'_>,
) -> Result<TrainOutcome> {
    train_counterfactual(
        queries,
        &PseudoLabels::from_true_labels(queries),
        template,
        config,
        monitor,
    )
}

/// Full-information training on a seeded random subset of `n_queries`
/// training queries (kept in their original order).
pub fn train_production(
    queries: &[Query],
    n_queries: usize,
    template: &ScoringModel,
    config: &TrainConfig,
    subset_seed: u64,
    monitor: &Monitor<'_>,
) -> Result<TrainOutcome> {
    let subset = production_subset(queries.len(), n_queries, subset_seed)?;
    let chosen: Vec<Query> = subset.iter().map(|&i| queries[i].clone()).collect();
    train_full_info(&chosen, template, config, monitor)
}

/// Indices of the production training subset, ascending.
pub fn production_subset(n_available: usize, n_queries: usize, seed: u64) -> Result<Vec<usize>> {
    if n_queries == 0 || n_queries > n_available {
        return Err(Error::InvalidArgument(alloc::format!(
            "production needs 1..={n_available} queries, got {n_queries}"
        )));
    }
    let mut rng = rng_from_seed(seed);
    let mut idx = sample(&mut rng, n_available, n_queries).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

struct RegressionObjective {
    head: crate::ranker::Head,
    /// Per query, per doc: target, or `None` for documents without evidence.
    targets: Vec<Vec<Option<f64>>>,
}

impl QueryObjective for RegressionObjective {
    fn eval(&self, query_index: usize, scores: &[f64]) -> (f64, Vec<f64>) {
        let targets = &self.targets[query_index];
        let y = crate::ranker::apply_head(self.head, scores);
        let mut loss = 0.0;
        let upstream: Vec<f64> = y
            .iter()
            .zip(targets)
            .map(|(yi, t)| match t {
                Some(t) => {
                    let r = yi - t;
                    loss += r * r;
                    2.0 * r
                }
                None => 0.0,
            })
            .collect();
        (
            loss,
            crate::ranker::head_backward(self.head, scores, &upstream),
        )
    }
}

/// Fits `head(model(x))` to per-document targets by squared error.
pub fn train_regression(
    queries: &[&Query],
    targets: Vec<Vec<Option<f64>>>,
    template: &ScoringModel,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    if targets.len() != queries.len() {
        return Err(Error::DimensionMismatch {
            expected: queries.len(),
            got: targets.len(),
        });
    }
    let objective = RegressionObjective {
        head: template.head,
        targets,
    };
    fit(
        template,
        queries,
        config,
        &objective,
        &Monitor::default(),
        false,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::generate_synthetic;
    use crate::estimators::true_weight_table;
    use crate::ranker::{Architecture, Head};

    #[test]
    fn equal_labels_no_gradient() {
        let g = lambda_gradients(&[0.3, -0.2, 1.0], &[1.0, 1.0, 1.0], 1.0, RankWeight::Dcg);
        assert_eq!(g, vec![0.0; 3]);
    }

    #[test]
    fn two_document_lambda() {
        // 0.5 · (1 − 1/log2 3)
        let g = lambda_gradients(&[0.0, 0.0], &[1.0, 0.0], 1.0, RankWeight::Dcg);
        let expected = 0.5 * (1.0 - 1.0 / libm::log2(3.0));
        assert!((expected - 0.184_535).abs() < 1e-6);
        assert!((g[0] + expected).abs() < 1e-12, "{g:?}");
        assert!((g[1] - expected).abs() < 1e-12);
    }

    #[test]
    fn negative_labels_form_pairs() {
        let g = lambda_gradients(&[0.0, 0.5], &[-0.4, -1.2], 1.0, RankWeight::Dcg);
        assert!(g[0] < 0.0 && g[1] > 0.0);
        assert!((g[0] + g[1]).abs() < 1e-15);
    }

    #[test]
    fn label_scaling_scales_gradients() {
        let s = [0.2, -0.7, 1.1, 0.0];
        let l = [1.0, 0.0, 0.5, -0.3];
        let g1 = lambda_gradients(&s, &l, 1.0, RankWeight::Dcg);
        let l3: Vec<f64> = l.iter().map(|x| 3.0 * x).collect();
        let g3 = lambda_gradients(&s, &l3, 1.0, RankWeight::Dcg);
        for (a, b) in g1.iter().zip(&g3) {
            assert!((3.0 * a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn adagrad_first_step_has_lr_magnitude() {
        let mut opt = AdaGrad::new(2, 0.1, 1e-8);
        let mut p = [1.0, 1.0];
        opt.step(&mut p, &[4.0, -0.5]);
        assert!((p[0] - 0.9).abs() < 1e-6);
        assert!((p[1] - 1.1).abs() < 1e-6);
    }

    fn small_setup() -> (crate::Dataset, ScoringModel) {
        let ds = generate_synthetic(60, 8, 4, 3).unwrap();
        let m = ScoringModel::new(Architecture::Mlp(vec![8]), 4, Head::None, 5);
        (ds, m)
    }

    #[test]
    fn zero_epochs_is_identity() {
        let (ds, m) = small_setup();
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let out = train_full_info(&ds.train, &m, &cfg, &Monitor::default()).unwrap();
        assert_eq!(out.model, m);
        assert_eq!(out.trace.len(), 1);
    }

    #[test]
    fn training_is_deterministic_and_reduces_loss() {
        let (ds, m) = small_setup();
        let cfg = TrainConfig {
            epochs: 5,
            seed: 9,
            ..TrainConfig::default()
        };
        let a = train_full_info(&ds.train, &m, &cfg, &Monitor::default()).unwrap();
        let b = train_full_info(&ds.train, &m, &cfg, &Monitor::default()).unwrap();
        assert_eq!(a.model.params, b.model.params);
        assert!(a.trace[5].train_loss.unwrap() < a.trace[0].train_loss.unwrap());
    }

    #[test]
    fn best_validation_epoch_is_selected() {
        let (ds, m) = small_setup();
        let cfg = TrainConfig {
            epochs: 4,
            ..TrainConfig::default()
        };
        let table = true_weight_table(&ds.validation);
        let monitor = Monitor {
            validation: Some((&table, &ds.validation)),
            test: Some(&ds.test),
        };
        let out = train_full_info(&ds.train, &m, &cfg, &monitor).unwrap();
        let best = out
            .trace
            .iter()
            .map(|r| r.validation_delta_hat.unwrap())
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(out.trace[out.best_epoch].validation_delta_hat, Some(best));
        let v = table
            .estimate_model(&out.model, &ds.validation, RankWeight::Dcg)
            .unwrap();
        assert_eq!(v, best);
        assert!(out.trace.iter().all(|r| r.test_ndcg10.is_some()));
    }

    #[test]
    fn production_on_all_queries_matches_full_info() {
        let (ds, m) = small_setup();
        let cfg = TrainConfig {
            epochs: 3,
            ..TrainConfig::default()
        };
        let n = ds.train.len();
        let p = train_production(&ds.train, n, &m, &cfg, 77, &Monitor::default()).unwrap();
        let f = train_full_info(&ds.train, &m, &cfg, &Monitor::default()).unwrap();
        assert_eq!(p.model.params, f.model.params);
        assert_eq!(
            production_subset(50, 20, 4).unwrap(),
            production_subset(50, 20, 4).unwrap()
        );
        assert!(production_subset(5, 6, 4).is_err());
    }

    #[test]
    fn dropout_changes_training_but_stays_deterministic() {
        let ds = generate_synthetic(30, 6, 4, 3).unwrap();
        let m = ScoringModel::new(Architecture::Mlp(vec![8, 8]), 4, Head::None, 5);
        let cfg = TrainConfig {
            epochs: 2,
            dropout: 0.1,
            ..TrainConfig::default()
        };
        let a = train_full_info(&ds.train, &m, &cfg, &Monitor::default()).unwrap();
        let b = train_full_info(&ds.train, &m, &cfg, &Monitor::default()).unwrap();
        assert_eq!(a.model.params, b.model.params);
        let plain = TrainConfig {
            dropout: 0.0,
            ..cfg
        };
        let c = train_full_info(&ds.train, &m, &plain, &Monitor::default()).unwrap();
        assert_ne!(a.model.params, c.model.params);
    }

    #[test]
    fn regression_to_zero_targets() {
        let ds = generate_synthetic(30, 6, 4, 3).unwrap();
        let m = ScoringModel::new(Architecture::Mlp(vec![8]), 4, Head::Sigmoid, 5);
        let refs: Vec<&Query> = ds.train.iter().collect();
        let targets = refs.iter().map(|q| vec![Some(0.0); q.len()]).collect();
        let cfg = TrainConfig {
            epochs: 30,
            learning_rate: 0.05,
            ..TrainConfig::default()
        };
        let out = train_regression(&refs, targets, &m, &cfg).unwrap();
        let mean: f64 = refs
            .iter()
            .flat_map(|q| out.model.predict_query(q).unwrap())
            .sum::<f64>()
            / refs.iter().map(|q| q.len()).sum::<usize>() as f64;
        assert!(mean <= 0.05, "mean {mean}");
    }
}
