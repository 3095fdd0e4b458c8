//! Rank-based bias schedules and the trust-bias click model.
//!
//! A schedule holds, per display rank `k`, the examination probability
//! `θ_k` and the perceived-relevance probabilities `ε⁺_k` (relevant item)
//! and `ε⁻_k` (non-relevant item). The click probability of an item with
//! relevance probability `γ` shown at rank `k` is the affine map
//! `α_k·γ + β_k` with `α_k = θ_k(ε⁺_k − ε⁻_k)` and `β_k = θ_k·ε⁻_k`.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write as _;

use crate::{Error, Result};

const SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct BiasSchedule {
    theta: Vec<f64>,
    eps_plus: Vec<f64>,
    eps_minus: Vec<f64>,
    alpha: Vec<f64>,
    beta: Vec<f64>,
}

impl BiasSchedule {
    /// Builds a schedule and rejects it unless `θ_k ∈ (0,1]`, `ε ∈ [0,1]`,
    /// `α_k > 0`, and `α_k + β_k ≤ 1` at every rank.
    pub fn new(theta: Vec<f64>, eps_plus: Vec<f64>, eps_minus: Vec<f64>) -> Result<Self> {
        let s = Self::new_unchecked(theta, eps_plus, eps_minus)?;
        s.validate()?;
        Ok(s)
    }

    /// Builds a schedule without the positivity checks, for degenerate test cases
    /// (`α_k = 0`, `ε⁺_k < ε⁻_k`). Lengths must still agree.
    pub fn new_unchecked(theta: Vec<f64>, eps_plus: Vec<f64>, eps_minus: Vec<f64>) -> Result<Self> {
        if theta.is_empty() || theta.len() != eps_plus.len() || theta.len() != eps_minus.len() {
            return Err(Error::InvalidSchedule(format!(
                "per-rank vectors must be nonempty and equally long ({}, {}, {})",
                theta.len(),
                eps_plus.len(),
                eps_minus.len()
            )));
        }
        let alpha = theta
            .iter()
            .zip(eps_plus.iter().zip(&eps_minus))
            .map(|(t, (p, m))| t * (p - m))
            .collect();
        let beta = theta.iter().zip(&eps_minus).map(|(t, m)| t * m).collect();
        Ok(Self {
            theta,
            eps_plus,
            eps_minus,
            alpha,
            beta,
        })
    }

    /// The simulation schedule: `θ_k = (1/min(k,20))^η`,
    /// `ε⁺_k = 1 − (min(k,20)+1)/100`, `ε⁻_k = ε⁻_1 / min(k,10)`.
    pub fn standard(eta: f64, eps_minus_1: f64, max_rank: usize) -> Result<Self> {
        if !(eta >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "eta must be >= 0, got {eta}"
            )));
        }
        if !(eps_minus_1 > 0.0 && eps_minus_1 < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "eps_minus_1 must lie in (0,1), got {eps_minus_1}"
            )));
        }
        if max_rank == 0 {
            return Err(Error::InvalidArgument("max_rank must be >= 1".into()));
        }
        let mut theta = Vec::with_capacity(max_rank);
        let mut eps_plus = Vec::with_capacity(max_rank);
        let mut eps_minus = Vec::with_capacity(max_rank);
        for k in 1..=max_rank {
            let k20 = k.min(20) as f64;
            theta.push(libm::pow(1.0 / k20, eta));
            eps_plus.push(1.0 - (k20 + 1.0) / 100.0);
            eps_minus.push(eps_minus_1 / k.min(10) as f64);
        }
        Self::new(theta, eps_plus, eps_minus)
    }

    /// Same `θ_k`, `ε⁺`, `ε⁻` at every rank.
    pub fn constant_eps(theta: Vec<f64>, eps_plus: f64, eps_minus: f64) -> Result<Self> {
        let n = theta.len();
        Self::new(theta, alloc::vec![eps_plus; n], alloc::vec![eps_minus; n])
    }

    /// Rebuilds a schedule from click probabilities of relevant (`ζ⁺`) and
    /// non-relevant (`ζ⁻`) items. Only `α = ζ⁺ − ζ⁻` and `β = ζ⁻` are
    /// identifiable; the representative chosen is `θ = ζ⁺`, `ε⁺ = 1`,
    /// `ε⁻ = ζ⁻/ζ⁺`, which reproduces `α`, `β` and the Bayes-IPS ratio
    /// `ε⁺/(ε⁺+ε⁻)` exactly.
    pub fn from_click_rates(zeta_plus: &[f64], zeta_minus: &[f64]) -> Result<Self> {
        if zeta_plus.len() != zeta_minus.len() {
            return Err(Error::InvalidSchedule("zeta lengths differ".into()));
        }
        let theta = zeta_plus.to_vec();
        let eps_plus = alloc::vec![1.0; theta.len()];
        let eps_minus = zeta_plus
            .iter()
            .zip(zeta_minus)
            .map(|(p, m)| if *p > 0.0 { m / p } else { 0.0 })
            .collect();
        let mut s = Self::new(theta, eps_plus, eps_minus)?;
        s.alpha = zeta_plus
            .iter()
            .zip(zeta_minus)
            .map(|(p, m)| p - m)
            .collect();
        s.beta = zeta_minus.to_vec();
        Ok(s)
    }

    fn validate(&self) -> Result<()> {
        for k in 0..self.max_rank() {
            let rank = k + 1;
            let (t, p, m) = (self.theta[k], self.eps_plus[k], self.eps_minus[k]);
            if !(t > 0.0 && t <= 1.0 + SLACK) {
                return Err(Error::InvalidSchedule(format!(
                    "theta_{rank} = {t} not in (0,1]"
                )));
            }
            if !((-SLACK..=1.0 + SLACK).contains(&p) && (-SLACK..=1.0 + SLACK).contains(&m)) {
                return Err(Error::InvalidSchedule(format!(
                    "eps_{rank} = ({p}, {m}) not in [0,1]"
                )));
            }
            if !(self.alpha[k] > 0.0) {
                return Err(Error::InvalidSchedule(format!(
                    "alpha_{rank} = {} must be positive",
                    self.alpha[k]
                )));
            }
            if self.beta[k] < -SLACK || self.alpha[k] + self.beta[k] > 1.0 + SLACK {
                return Err(Error::InvalidSchedule(format!(
                    "click probabilities at rank {rank} leave [0,1]"
                )));
            }
        }
        Ok(())
    }

    pub fn max_rank(&self) -> usize {
        self.theta.len()
    }

    fn index(&self, rank: usize) -> Result<usize> {
        if rank == 0 || rank > self.max_rank() {
            return Err(Error::RankOutOfRange {
                rank,
                max_rank: self.max_rank(),
            });
        }
        Ok(rank - 1)
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }
    pub fn eps_plus(&self) -> &[f64] {
        &self.eps_plus
    }
    pub fn eps_minus(&self) -> &[f64] {
        &self.eps_minus
    }
    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }
    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    /// `(α_k, β_k)` at a 1-based rank.
    pub fn affine_at(&self, rank: usize) -> Result<(f64, f64)> {
        let k = self.index(rank)?;
        Ok((self.alpha[k], self.beta[k]))
    }

    /// `(θ_k, ε⁺_k, ε⁻_k)` at a 1-based rank.
    pub fn params_at(&self, rank: usize) -> Result<(f64, f64, f64)> {
        let k = self.index(rank)?;
        Ok((self.theta[k], self.eps_plus[k], self.eps_minus[k]))
    }

    /// `P(C=1 | γ, k) = α_k·γ + β_k`.
    pub fn click_probability(&self, gamma: f64, rank: usize) -> Result<f64> {
        let (a, b) = self.affine_at(rank)?;
        Ok(a * gamma + b)
    }

    /// Whether some IPS propensities could order rankers correctly: requires
    /// `ε⁺_k/ε⁺_k' = ε⁻_k/ε⁻_k'` for every rank pair, within `tolerance`.
    ///
    /// A pair with `ε⁻_k = ε⁻_k' = 0` has no trust bias and passes; a zero
    /// denominator on only one side fails.
    pub fn ips_feasibility(&self, tolerance: f64) -> bool {
        let n = self.max_rank();
        for k in 0..n {
            for j in 0..n {
                if k == j {
                    continue;
                }
                let (pk, pj) = (self.eps_plus[k], self.eps_plus[j]);
                let (mk, mj) = (self.eps_minus[k], self.eps_minus[j]);
                if mk == 0.0 && mj == 0.0 {
                    continue;
                }
                if pj == 0.0 || mj == 0.0 {
                    return false;
                }
                let diff = pk / pj - mk / mj;
                if !(libm::fabs(diff) <= tolerance) {
                    return false;
                }
            }
        }
        true
    }

    /// FNV-1a hash of the per-rank parameters, for tagging result rows.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in self
            .theta
            .iter()
            .chain(&self.eps_plus)
            .chain(&self.eps_minus)
            .chain(&self.alpha)
            .chain(&self.beta)
        {
            for b in v.to_bits().to_le_bytes() {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }

    /// Per-rank table `k,theta,eps_plus,eps_minus,alpha,beta` (values round-trip exactly).
    pub fn to_csv_table(&self) -> String {
        let mut out = String::from("k,theta,eps_plus,eps_minus,alpha,beta\n");
        for k in 0..self.max_rank() {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                k + 1,
                self.theta[k],
                self.eps_plus[k],
                self.eps_minus[k],
                self.alpha[k],
                self.beta[k]
            );
        }
        out
    }

    /// Reads a table with at least the columns `k,theta,eps_plus,eps_minus`
    /// (in any order; extra columns are ignored). Rows must cover ranks `1..=n`.
    pub fn from_csv_table(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'));
        let (_, header) = lines.next().ok_or(Error::EmptyInput)?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        let col = |name: &str| {
            cols.iter()
                .position(|c| *c == name)
                .ok_or_else(|| Error::Parse {
                    line: 1,
                    msg: format!("missing column `{name}`"),
                })
        };
        let (ck, ct, cp, cm) = (
            col("k")?,
            col("theta")?,
            col("eps_plus")?,
            col("eps_minus")?,
        );
        let (mut theta, mut eps_plus, mut eps_minus) = (Vec::new(), Vec::new(), Vec::new());
        for (i, line) in lines {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let get = |c: usize| -> Result<f64> {
                fields
                    .get(c)
                    .and_then(|f| f.parse().ok())
                    .ok_or_else(|| Error::Parse {
                        line: i + 1,
                        msg: format!("bad field in `{line}`"),
                    })
            };
            let k = get(ck)? as usize;
            if k != theta.len() + 1 {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("expected rank {}, found {k}", theta.len() + 1),
                });
            }
            theta.push(get(ct)?);
            eps_plus.push(get(cp)?);
            eps_minus.push(get(cm)?);
        }
        Self::new(theta, eps_plus, eps_minus)
    }
}

/// The three knobs of [`BiasSchedule::standard`], as stored in a `[bias]` config section.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StandardParams {
    pub eta: f64,
    pub eps_minus_1: f64,
    pub max_rank: usize,
}

impl StandardParams {
    pub fn schedule(&self) -> Result<BiasSchedule> {
        BiasSchedule::standard(self.eta, self.eps_minus_1, self.max_rank)
    }

    pub fn to_config_section(&self) -> String {
        format!(
            "[bias]\neta = {}\neps_minus_1 = {}\nmax_rank = {}\n",
            self.eta, self.eps_minus_1, self.max_rank
        )
    }

    /// Reads `eta`, `eps_minus_1`, `max_rank` from `key = value` lines; a
    /// `[bias]` header and `#` comments are allowed.
    pub fn from_config_section(text: &str) -> Result<Self> {
        let (mut eta, mut eps, mut max_rank) = (None, None, None);
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() || line.starts_with('[') {
                continue;
            }
            let perr = || Error::Parse {
                line: i + 1,
                msg: format!("bad line `{line}`"),
            };
            let (key, value) = line.split_once('=').ok_or_else(perr)?;
            let value = value.trim();
            match key.trim() {
                "eta" => eta = Some(value.parse::<f64>().map_err(|_| perr())?),
                "eps_minus_1" => eps = Some(value.parse::<f64>().map_err(|_| perr())?),
                "max_rank" => max_rank = Some(value.parse::<usize>().map_err(|_| perr())?),
                _ => {}
            }
        }
        let missing = |k: &str| Error::InvalidArgument(format!("missing `{k}`"));
        Ok(Self {
            eta: eta.ok_or_else(|| missing("eta"))?,
            eps_minus_1: eps.ok_or_else(|| missing("eps_minus_1"))?,
            max_rank: max_rank.ok_or_else(|| missing("max_rank"))?,
        })
    }
}
