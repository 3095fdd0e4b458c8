//! Click simulation: logged interactions `(query, displayed ranking, clicks)`
//! under a fixed production ranker and a bias schedule.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt::Write as _;

use rand::Rng as _;

use crate::bias::BiasSchedule;
use crate::dataset::Query;
use crate::ranker::{rank_query, Ranking, ScoringModel};
use crate::{rng_for_index, Error, Result, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BudgetUnit {
    #[default]
    Clicks,
    Sessions,
}

impl BudgetUnit {
    pub fn name(self) -> &'static str {
        match self {
            BudgetUnit::Clicks => "clicks",
            BudgetUnit::Sessions => "sessions",
        }
    }
}

impl core::str::FromStr for BudgetUnit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "clicks" => Ok(BudgetUnit::Clicks),
            "sessions" => Ok(BudgetUnit::Sessions),
            other => Err(Error::InvalidArgument(format!(
                "unknown budget unit `{other}`"
            ))),
        }
    }
}

impl core::fmt::Display for BudgetUnit {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Session {
    pub session_id: u64,
    pub query_id: u64,
    /// Shared by every session of the same query.
    pub ranking: Arc<Ranking>,
    /// `clicks[position]`, aligned with `ranking.order`.
    pub clicks: Vec<bool>,
}

impl Session {
    /// `(doc_id, rank, clicked)` for each displayed position.
    pub fn displayed(&self) -> impl Iterator<Item = (usize, usize, bool)> + '_ {
        self.ranking
            .order
            .iter()
            .zip(&self.clicks)
            .enumerate()
            .map(|(pos, (&d, &c))| (d, pos + 1, c))
    }

    pub fn click_count(&self) -> usize {
        self.clicks.iter().filter(|&&c| c).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClickLog {
    pub sessions: Vec<Session>,
    pub schedule: BiasSchedule,
    pub seed: u64,
    pub budget: u64,
    pub unit: BudgetUnit,
}

/// Click and impression counts of one document at one display rank.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Impression {
    pub query_id: u64,
    pub doc_id: usize,
    pub rank: usize,
    pub impressions: u64,
    pub clicks: u64,
}

impl ClickLog {
    pub fn len(&self) -> usize {
        self.sessions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sessions.is_empty()
    }

    pub fn total_clicks(&self) -> u64 {
        self.sessions.iter().map(|s| s.click_count() as u64).sum()
    }

    /// Aggregated counts per `(query, doc, rank)`, sorted by that key.
    pub fn impressions(&self) -> Vec<Impression> {
        let mut counts: BTreeMap<(u64, usize, usize), (u64, u64)> = BTreeMap::new();
        for s in &self.sessions {
            for (doc, rank, clicked) in s.displayed() {
                let e = counts.entry((s.query_id, doc, rank)).or_insert((0, 0));
                e.0 += 1;
                e.1 += u64::from(clicked);
            }
        }
        counts
            .into_iter()
            .map(
                |((query_id, doc_id, rank), (impressions, clicks))| Impression {
                    query_id,
                    doc_id,
                    rank,
                    impressions,
                    clicks,
                },
            )
            .collect()
    }

    /// Concatenates two logs that share a schedule; session ids are renumbered.
    pub fn concat(&self, other: &ClickLog) -> ClickLog {
        let mut sessions = self.sessions.clone();
        sessions.extend(other.sessions.iter().cloned());
        for (i, s) in sessions.iter_mut().enumerate() {
            s.session_id = i as u64;
        }
        ClickLog {
            sessions,
            schedule: self.schedule.clone(),
            seed: self.seed,
            budget: self.budget + other.budget,
            unit: self.unit,
        }
    }

    /// Line-oriented text form: a `#` header with seed, budget and the
    /// per-rank schedule, then one `session` line per interaction.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# clicklog v1\n");
        let _ = writeln!(out, "# seed {}", self.seed);
        let _ = writeln!(out, "# budget {} {}", self.budget, self.unit);
        let s = &self.schedule;
        for k in 0..s.max_rank() {
            let _ = writeln!(
                out,
                "# schedule {} {} {} {}",
                k + 1,
                s.theta()[k],
                s.eps_plus()[k],
                s.eps_minus()[k]
            );
        }
        for sess in &self.sessions {
            let _ = write!(
                out,
                "session {} qid:{} ranking:",
                sess.session_id, sess.query_id
            );
            for (i, d) in sess.ranking.order.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                let _ = write!(out, "{d}");
            }
            out.push_str(" clicks:");
            for &c in &sess.clicks {
                out.push(if c { '1' } else { '0' });
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut seed = None;
        let mut budget = None;
        let (mut theta, mut eps_plus, mut eps_minus) = (Vec::new(), Vec::new(), Vec::new());
        let mut sessions = Vec::new();
        let mut shared: BTreeMap<(u64, Vec<usize>), Arc<Ranking>> = BTreeMap::new();

        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim();
            let perr = |msg: String| Error::Parse { line: line_no, msg };
            if line.is_empty() {
                continue;
            }
            if let Some(h) = line.strip_prefix('#') {
                let mut t = h.split_whitespace();
                match t.next() {
                    Some("seed") => {
                        seed = t.next().and_then(|v| v.parse::<u64>().ok());
                        if seed.is_none() {
                            return Err(perr("bad seed".into()));
                        }
                    }
                    Some("budget") => {
                        let n = t.next().and_then(|v| v.parse::<u64>().ok());
                        let u = t.next().and_then(|v| v.parse::<BudgetUnit>().ok());
                        match (n, u) {
                            (Some(n), Some(u)) => budget = Some((n, u)),
                            _ => return Err(perr("bad budget".into())),
                        }
                    }
                    Some("schedule") => {
                        let v: Vec<f64> = t.filter_map(|x| x.parse().ok()).collect();
                        if v.len() != 4 || v[0] as usize != theta.len() + 1 {
                            return Err(perr("bad schedule row".into()));
                        }
                        theta.push(v[1]);
                        eps_plus.push(v[2]);
                        eps_minus.push(v[3]);
                    }
                    _ => {}
                }
                continue;
            }
            let mut t = line.split_whitespace();
            let id = match (t.next(), t.next()) {
                (Some("session"), Some(id)) => id
                    .parse::<u64>()
                    .map_err(|_| perr(format!("bad session id `{id}`")))?,
                _ => return Err(perr("expected `session <id>`".into())),
            };
            let qid = t
                .next()
                .and_then(|x| x.strip_prefix("qid:"))
                .and_then(|x| x.parse::<u64>().ok())
                .ok_or_else(|| perr("bad qid".into()))?;
            let order = t
                .next()
                .and_then(|x| x.strip_prefix("ranking:"))
                .ok_or_else(|| perr("missing ranking".into()))?
                .split(',')
                .map(|d| {
                    d.parse::<usize>()
                        .map_err(|_| perr(format!("bad doc id `{d}`")))
                })
                .collect::<Result<Vec<_>>>()?;
            let clicks = t
                .next()
                .and_then(|x| x.strip_prefix("clicks:"))
                .ok_or_else(|| perr("missing clicks".into()))?
                .chars()
                .map(|c| match c {
                    '0' => Ok(false),
                    '1' => Ok(true),
                    _ => Err(perr(format!("bad click bit `{c}`"))),
                })
                .collect::<Result<Vec<_>>>()?;
            if clicks.len() != order.len() {
                return Err(perr(
                    "click vector length differs from ranking length".into(),
                ));
            }
            let ranking = shared
                .entry((qid, order.clone()))
                .or_insert_with(|| {
                    Arc::new(Ranking {
                        query_id: qid,
                        order,
                    })
                })
                .clone();
            if !ranking.is_permutation() {
                return Err(perr("ranking is not a permutation".into()));
            }
            sessions.push(Session {
                session_id: id,
                query_id: qid,
                ranking,
                clicks,
            });
        }
        let seed = seed.ok_or_else(|| Error::InvalidArgument("missing `# seed` header".into()))?;
        let (budget, unit) =
            budget.ok_or_else(|| Error::InvalidArgument("missing `# budget` header".into()))?;
        let schedule = BiasSchedule::new_unchecked(theta, eps_plus, eps_minus)?;
        Ok(ClickLog {
            sessions,
            schedule,
            seed,
            budget,
            unit,
        })
    }
}

/// Clicks each displayed document independently with probability `α_k·γ + β_k`.
///
/// `gamma` is indexed by doc id; the result is aligned with `ranking.order`.
pub fn simulate_session(
    ranking: &Ranking,
    gamma: &[f64],
    schedule: &BiasSchedule,
    rng: &mut Rng,
) -> Result<Vec<bool>> {
    ranking
        .order
        .iter()
        .enumerate()
        .map(|(pos, &d)| {
            let p = schedule.click_probability(gamma[d], pos + 1)?;
            Ok(rng.random::<f64>() < p)
        })
        .collect()
}

/// Samples queries uniformly, ranks them with the fixed `production` model,
/// and simulates sessions until the click or session total reaches `budget`.
///
/// Session `i` draws from its own stream derived from `(seed, i)`.
pub fn simulate_log(
    queries: &[Query],
    production: &ScoringModel,
    schedule: &BiasSchedule,
    budget: u64,
    unit: BudgetUnit,
    seed: u64,
) -> Result<ClickLog> {
    if budget == 0 {
        return Err(Error::InvalidArgument("budget must be >= 1".into()));
    }
    if queries.is_empty() {
        return Err(Error::InvalidArgument("no queries to sample from".into()));
    }
    let mut rankings = Vec::with_capacity(queries.len());
    let mut gammas = Vec::with_capacity(queries.len());
    let mut expected_clicks = 0.0;
    for q in queries {
        production.score(&q.documents[0].features)?;
        let r = rank_query(production, q);
        if r.len() > schedule.max_rank() {
            return Err(Error::RankOutOfRange {
                rank: r.len(),
                max_rank: schedule.max_rank(),
            });
        }
        let g = q.gammas();
        for (pos, &d) in r.order.iter().enumerate() {
            expected_clicks += schedule.click_probability(g[d], pos + 1)?;
        }
        rankings.push(Arc::new(r));
        gammas.push(g);
    }
    if unit == BudgetUnit::Clicks && !(expected_clicks > 0.0) {
        return Err(Error::InvalidArgument(
            "click budget can never be reached: every click probability is zero".into(),
        ));
    }

    let mut sessions = Vec::new();
    let mut total = 0u64;
    let mut index = 0u64;
    while total < budget {
        let mut rng = rng_for_index(seed, index);
        let qi = rng.random_range(0..queries.len());
        let clicks = simulate_session(&rankings[qi], &gammas[qi], schedule, &mut rng)?;
        total += match unit {
            BudgetUnit::Clicks => clicks.iter().filter(|&&c| c).count() as u64,
            BudgetUnit::Sessions => 1,
        };
        sessions.push(Session {
            session_id: index,
            query_id: queries[qi].query_id,
            ranking: rankings[qi].clone(),
            clicks,
        });
        index += 1;
    }
    Ok(ClickLog {
        sessions,
        schedule: schedule.clone(),
        seed,
        budget,
        unit,
    })
}
