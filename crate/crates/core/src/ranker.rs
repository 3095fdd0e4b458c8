//! Document scorers (linear and ELU MLP) with exact reverse-mode gradients,
//! ranking induction, and the regression-head activations.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::fmt::Write as _;
use core::str::FromStr;

use rand::Rng as _;

use crate::dataset::Query;
use crate::{rng_from_seed, Error, Result, Rng};

const SIGMOID_CLAMP: f64 = 30.0;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Architecture {
    Linear,
    /// Fully connected ELU layers of the given widths, then a linear output unit.
    Mlp(Vec<usize>),
}

impl Architecture {
    /// Desk-scale default: two hidden layers of 32 and 16 units.
    pub fn desk_default() -> Self {
        Architecture::Mlp(vec![32, 16])
    }

    fn layer_dims(&self, feature_dim: usize) -> Vec<usize> {
        let mut dims = vec![feature_dim];
        if let Architecture::Mlp(hidden) = self {
            dims.extend_from_slice(hidden);
        }
        dims.push(1);
        dims
    }

    pub fn param_count(&self, feature_dim: usize) -> usize {
        self.layer_dims(feature_dim)
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Architecture::Linear => f.write_str("linear"),
            Architecture::Mlp(h) => {
                f.write_str("mlp:")?;
                for (i, n) in h.iter().enumerate() {
                    if i > 0 {
                        f.write_str(",")?;
                    }
                    write!(f, "{n}")?;
                }
                Ok(())
            }
        }
    }
}

impl FromStr for Architecture {
    type Err = Error;

    /// Accepts `linear`, `mlp:32,16` or `mlp:` (no hidden layers).
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "linear" {
            return Ok(Architecture::Linear);
        }
        let hidden = s
            .strip_prefix("mlp:")
            .or_else(|| s.strip_prefix("mlp"))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown architecture `{s}`")))?;
        let hidden = hidden
            .split(',')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(|t| match t.parse::<usize>() {
                Ok(n) if n > 0 => Ok(n),
                _ => Err(Error::InvalidArgument(format!("bad layer width `{t}`"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Architecture::Mlp(hidden))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Head {
    #[default]
    None,
    Sigmoid,
    Softmax,
    SoftMinMax,
}

impl Head {
    pub fn name(self) -> &'static str {
        match self {
            Head::None => "none",
            Head::Sigmoid => "sigmoid",
            Head::Softmax => "softmax",
            Head::SoftMinMax => "soft-min-max",
        }
    }
}

impl fmt::Display for Head {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Head {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "none" => Ok(Head::None),
            "sigmoid" => Ok(Head::Sigmoid),
            "softmax" => Ok(Head::Softmax),
            "soft-min-max" | "softminmax" => Ok(Head::SoftMinMax),
            other => Err(Error::InvalidArgument(format!("unknown head `{other}`"))),
        }
    }
}

/// A displayed or induced ranking: `order[position] = doc_id`, position 0 is rank 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ranking {
    pub query_id: u64,
    pub order: Vec<usize>,
}

impl Ranking {
    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// True when `order` contains each of `0..len` exactly once.
    pub fn is_permutation(&self) -> bool {
        let mut seen = vec![false; self.order.len()];
        for &d in &self.order {
            if d >= seen.len() || seen[d] {
                return false;
            }
            seen[d] = true;
        }
        true
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoringModel {
    pub architecture: Architecture,
    pub feature_dim: usize,
    pub head: Head,
    pub params: Vec<f64>,
}

/// Per-document activations kept from a forward pass for the backward pass.
#[derive(Debug, Clone, Default)]
pub(crate) struct Trace {
    /// Input to each layer (post-activation, post-dropout).
    inputs: Vec<Vec<f64>>,
    /// Pre-activation of each hidden layer.
    pre: Vec<Vec<f64>>,
    /// Inverted-dropout multipliers per hidden layer, if dropout was active there.
    masks: Vec<Option<Vec<f64>>>,
}

impl ScoringModel {
    /// Initializes weights and biases uniformly in `±1/sqrt(fan_in)`.
    pub fn new(architecture: Architecture, feature_dim: usize, head: Head, seed: u64) -> Self {
        let dims = architecture.layer_dims(feature_dim);
        let mut rng = rng_from_seed(seed);
        let mut params = Vec::with_capacity(architecture.param_count(feature_dim));
        for w in dims.windows(2) {
            let bound = 1.0 / libm::sqrt(w[0].max(1) as f64);
            for _ in 0..(w[0] * w[1] + w[1]) {
                params.push(rng.random_range(-bound..=bound));
            }
        }
        Self {
            architecture,
            feature_dim,
            head,
            params,
        }
    }

    pub fn zeros(architecture: Architecture, feature_dim: usize, head: Head) -> Self {
        let n = architecture.param_count(feature_dim);
        Self {
            architecture,
            feature_dim,
            head,
            params: vec![0.0; n],
        }
    }

    pub fn with_params(
        architecture: Architecture,
        feature_dim: usize,
        head: Head,
        params: Vec<f64>,
    ) -> Result<Self> {
        let expected = architecture.param_count(feature_dim);
        if params.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: params.len(),
            });
        }
        Ok(Self {
            architecture,
            feature_dim,
            head,
            params,
        })
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    fn dims(&self) -> Vec<usize> {
        self.architecture.layer_dims(self.feature_dim)
    }

    fn check_dim(&self, features: &[f64]) -> Result<()> {
        if features.len() != self.feature_dim {
            return Err(Error::DimensionMismatch {
                expected: self.feature_dim,
                got: features.len(),
            });
        }
        Ok(())
    }

    /// Raw score of one document; the head is not applied.
    pub fn score(&self, features: &[f64]) -> Result<f64> {
        self.check_dim(features)?;
        Ok(self.forward(features, None).0)
    }

    /// Gradient of the raw score with respect to the parameter vector.
    pub fn grad_score(&self, features: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(features)?;
        let (_, trace) = self.forward(features, None);
        let mut grad = vec![0.0; self.params.len()];
        self.backward(&trace, 1.0, &mut grad);
        Ok(grad)
    }

    /// Raw scores for every document of a query, indexed by doc id.
    pub fn score_query(&self, query: &Query) -> Result<Vec<f64>> {
        query
            .documents
            .iter()
            .map(|d| self.score(&d.features))
            .collect()
    }

    /// Scores followed by the model's head.
    pub fn predict_query(&self, query: &Query) -> Result<Vec<f64>> {
        Ok(apply_head(self.head, &self.score_query(query)?))
    }

    /// Forward pass; `dropout = Some((p, rng))` drops units of the last two
    /// hidden layers with probability `p` (inverted scaling).
    pub(crate) fn forward(
        &self,
        features: &[f64],
        mut dropout: Option<(f64, &mut Rng)>,
    ) -> (f64, Trace) {
        let dims = self.dims();
        let n_layers = dims.len() - 1;
        let n_hidden = n_layers - 1;
        let mut trace = Trace {
            inputs: Vec::with_capacity(n_layers),
            pre: Vec::with_capacity(n_hidden),
            masks: Vec::with_capacity(n_hidden),
        };
        let mut input = features.to_vec();
        let mut offset = 0;
        let mut out = 0.0;
        for layer in 0..n_layers {
            let (n_in, n_out) = (dims[layer], dims[layer + 1]);
            let weights = &self.params[offset..offset + n_in * n_out];
            let biases = &self.params[offset + n_in * n_out..offset + n_in * n_out + n_out];
            offset += n_in * n_out + n_out;
            let z: Vec<f64> = (0..n_out)
                .map(|o| {
                    let row = &weights[o * n_in..(o + 1) * n_in];
                    dot(row, &input) + biases[o]
                })
                .collect();
            trace.inputs.push(core::mem::take(&mut input));
            if layer + 1 == n_layers {
                out = z[0];
            } else {
                let mut a: Vec<f64> = z.iter().map(|&v| elu(v)).collect();
                let mask = match dropout.as_mut() {
                    Some((p, rng)) if *p > 0.0 && layer + 2 >= n_hidden => {
                        let keep = 1.0 - *p;
                        let m: Vec<f64> = (0..n_out)
                            .map(|_| {
                                if rng.random::<f64>() < keep {
                                    1.0 / keep
                                } else {
                                    0.0
                                }
                            })
                            .collect();
                        for (ai, mi) in a.iter_mut().zip(&m) {
                            *ai *= mi;
                        }
                        Some(m)
                    }
                    _ => None,
                };
                trace.pre.push(z);
                trace.masks.push(mask);
                input = a;
            }
        }
        (out, trace)
    }

    /// Accumulates `upstream · ∂score/∂params` into `grad`.
    pub(crate) fn backward(&self, trace: &Trace, upstream: f64, grad: &mut [f64]) {
        let dims = self.dims();
        let n_layers = dims.len() - 1;
        let mut offsets = Vec::with_capacity(n_layers);
        let mut off = 0;
        for w in dims.windows(2) {
            offsets.push(off);
            off += w[0] * w[1] + w[1];
        }
        let mut delta = vec![upstream];
        for layer in (0..n_layers).rev() {
            let (n_in, n_out) = (dims[layer], dims[layer + 1]);
            let base = offsets[layer];
            let input = &trace.inputs[layer];
            for o in 0..n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                let row = &mut grad[base + o * n_in..base + (o + 1) * n_in];
                for (g, a) in row.iter_mut().zip(input) {
                    *g += d * a;
                }
                grad[base + n_in * n_out + o] += d;
            }
            if layer == 0 {
                break;
            }
            let weights = &self.params[base..base + n_in * n_out];
            let mut prev = vec![0.0; n_in];
            for o in 0..n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                for (p, w) in prev.iter_mut().zip(&weights[o * n_in..(o + 1) * n_in]) {
                    *p += d * w;
                }
            }
            let hidden = layer - 1;
            if let Some(mask) = &trace.masks[hidden] {
                for (p, m) in prev.iter_mut().zip(mask) {
                    *p *= m;
                }
            }
            for (p, z) in prev.iter_mut().zip(&trace.pre[hidden]) {
                *p *= elu_grad(*z);
            }
            delta = prev;
        }
    }

    /// Serializes the model to the checkpoint text format.
    pub fn to_checkpoint(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "cltr-model v1");
        let _ = writeln!(out, "architecture {}", self.architecture);
        let _ = writeln!(out, "feature_dim {}", self.feature_dim);
        let _ = writeln!(out, "head {}", self.head);
        let _ = writeln!(out, "params {}", self.params.len());
        for p in &self.params {
            let _ = writeln!(out, "{p:e}");
        }
        out
    }

    pub fn from_checkpoint(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
        let mut next = |key: &str| -> Result<(usize, String)> {
            let (n, line) = lines.next().ok_or_else(|| Error::Parse {
                line: 0,
                msg: format!("missing `{key}`"),
            })?;
            let rest = line.strip_prefix(key).ok_or_else(|| Error::Parse {
                line: n,
                msg: format!("expected `{key}`"),
            })?;
            Ok((n, rest.trim().to_string()))
        };
        let (n, magic) = next("cltr-model")?;
        if magic != "v1" {
            return Err(Error::Parse {
                line: n,
                msg: format!("unsupported checkpoint version `{magic}`"),
            });
        }
        let (_, arch) = next("architecture")?;
        let architecture: Architecture = arch.parse()?;
        let (n, fd) = next("feature_dim")?;
        let feature_dim: usize = fd.parse().map_err(|_| Error::Parse {
            line: n,
            msg: "bad feature_dim".into(),
        })?;
        let (_, head) = next("head")?;
        let head: Head = head.parse()?;
        let (n, count) = next("params")?;
        let count: usize = count.parse().map_err(|_| Error::Parse {
            line: n,
            msg: "bad parameter count".into(),
        })?;
        let params = text
            .lines()
            .enumerate()
            .skip(5)
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                l.trim().parse::<f64>().map_err(|_| Error::Parse {
                    line: i + 1,
                    msg: format!("bad parameter `{}`", l.trim()),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if params.len() != count {
            return Err(Error::DimensionMismatch {
                expected: count,
                got: params.len(),
            });
        }
        Self::with_params(architecture, feature_dim, head, params)
    }
}

/// Dot product with four independent accumulators so the loop vectorizes.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        libm::expm1(x)
    }
}

fn elu_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        libm::exp(x)
    }
}

/// Orders doc ids by descending score, ties by ascending doc id.
pub fn rank_by_scores(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

/// Ranks a query's documents with `model`.
///
/// # Panics
/// If the query's feature length differs from the model's.
pub fn rank_query(model: &ScoringModel, query: &Query) -> Ranking {
    let scores = model
        .score_query(query)
        .expect("query feature length must match the model");
    Ranking {
        query_id: query.query_id,
        order: rank_by_scores(&scores),
    }
}

pub fn sigmoid(x: f64) -> f64 {
    let x = x.clamp(-SIGMOID_CLAMP, SIGMOID_CLAMP);
    1.0 / (1.0 + libm::exp(-x))
}

/// Applies a regression head to the scores of one query.
pub fn apply_head(head: Head, scores: &[f64]) -> Vec<f64> {
    match head {
        Head::None => scores.to_vec(),
        Head::Sigmoid => scores.iter().map(|&s| sigmoid(s)).collect(),
        Head::Softmax => {
            let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = scores.iter().map(|&s| libm::exp(s - max)).collect();
            let z: f64 = exps.iter().sum();
            exps.into_iter().map(|e| e / z).collect()
        }
        Head::SoftMinMax => match min_max(scores) {
            None => vec![0.5; scores.len()],
            Some((imin, imax)) => {
                let (lo, hi) = (scores[imin], scores[imax]);
                let floor = libm::exp(lo - hi);
                let denom = 1.0 - floor;
                scores
                    .iter()
                    .enumerate()
                    .map(|(i, &s)| {
                        if i == imin {
                            0.0
                        } else if i == imax {
                            1.0
                        } else {
                            ((libm::exp(s - hi) - floor) / denom).clamp(0.0, 1.0)
                        }
                    })
                    .collect()
            }
        },
    }
}

/// Vector-Jacobian product of [`apply_head`]: maps `∂L/∂outputs` to `∂L/∂scores`.
pub fn head_backward(head: Head, scores: &[f64], upstream: &[f64]) -> Vec<f64> {
    match head {
        Head::None => upstream.to_vec(),
        Head::Sigmoid => scores
            .iter()
            .zip(upstream)
            .map(|(&s, &g)| {
                let y = sigmoid(s);
                g * y * (1.0 - y)
            })
            .collect(),
        Head::Softmax => {
            let y = apply_head(Head::Softmax, scores);
            let dot: f64 = y.iter().zip(upstream).map(|(a, b)| a * b).sum();
            y.iter()
                .zip(upstream)
                .map(|(&yi, &g)| yi * (g - dot))
                .collect()
        }
        Head::SoftMinMax => {
            let mut out = vec![0.0; scores.len()];
            let Some((imin, imax)) = min_max(scores) else {
                return out;
            };
            let hi = scores[imax];
            let floor = libm::exp(scores[imin] - hi);
            let denom = 1.0 - floor;
            let denom2 = denom * denom;
            for (i, (&s, &g)) in scores.iter().zip(upstream).enumerate() {
                if i == imin || i == imax || g == 0.0 {
                    continue;
                }
                let a = libm::exp(s - hi);
                out[i] += g * a / denom;
                out[imin] += g * floor * (a - 1.0) / denom2;
                out[imax] -= g * (a - floor) / denom2;
            }
            out
        }
    }
}

/// Indices of the first minimum and first maximum, or `None` when all scores are equal.
fn min_max(scores: &[f64]) -> Option<(usize, usize)> {
    let (mut imin, mut imax) = (0, 0);
    for (i, &s) in scores.iter().enumerate() {
        if s < scores[imin] {
            imin = i;
        }
        if s > scores[imax] {
            imax = i;
        }
    }
    if scores.is_empty() || scores[imin] == scores[imax] {
        None
    } else {
        Some((imin, imax))
    }
}
