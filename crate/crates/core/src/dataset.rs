//! Learning-to-rank datasets: the LTR text format, synthetic generation, and
//! graded-to-binary relevance.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write as _;

use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::fmt::sig6;
use crate::{rng_from_seed, Error, Result};

/// Highest graded label.
pub const MAX_GRADE: u8 = 4;

/// Standard deviation of the noise added to the planted latent score.
pub const SYNTHETIC_NOISE_SD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub doc_id: usize,
    pub features: Vec<f64>,
    pub graded_label: u8,
    pub binary_label: u8,
}

impl Document {
    pub fn new(doc_id: usize, features: Vec<f64>, graded_label: u8) -> Result<Self> {
        let binary_label = binarize(i64::from(graded_label))?;
        Ok(Self {
            doc_id,
            features,
            graded_label,
            binary_label,
        })
    }

    /// True relevance probability used by the click simulator.
    pub fn gamma(&self) -> f64 {
        f64::from(self.binary_label)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub query_id: u64,
    pub documents: Vec<Document>,
}

impl Query {
    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    /// Binary relevance of every document, indexed by doc id.
    pub fn gammas(&self) -> Vec<f64> {
        self.documents.iter().map(Document::gamma).collect()
    }

    /// Checks the per-query invariants: nonempty, doc ids `0..n`, uniform feature length.
    pub fn validate(&self, feature_dim: usize) -> Result<()> {
        if self.documents.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "query {} has no documents",
                self.query_id
            )));
        }
        for (i, doc) in self.documents.iter().enumerate() {
            if doc.doc_id != i {
                return Err(Error::InvalidArgument(format!(
                    "query {}: doc ids must be 0..n in order",
                    self.query_id
                )));
            }
            if doc.features.len() != feature_dim {
                return Err(Error::DimensionMismatch {
                    expected: feature_dim,
                    got: doc.features.len(),
                });
            }
            if doc.binary_label != binarize(i64::from(doc.graded_label))? {
                return Err(Error::InvalidArgument(format!(
                    "query {} doc {}: binary label disagrees with graded label",
                    self.query_id, i
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Validation,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: Vec<Query>,
    pub validation: Vec<Query>,
    pub test: Vec<Query>,
    pub feature_dim: usize,
}

impl Dataset {
    /// Assembles a dataset from already-split queries, checking every invariant.
    pub fn new(
        train: Vec<Query>,
        validation: Vec<Query>,
        test: Vec<Query>,
        feature_dim: usize,
    ) -> Result<Self> {
        let ds = Self {
            train,
            validation,
            test,
            feature_dim,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn split(&self, split: Split) -> &[Query] {
        match split {
            Split::Train => &self.train,
            Split::Validation => &self.validation,
            Split::Test => &self.test,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids: Vec<u64> = Vec::new();
        for q in self.train.iter().chain(&self.validation).chain(&self.test) {
            q.validate(self.feature_dim)?;
            ids.push(q.query_id);
        }
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::InvalidArgument(format!(
                "query id {} appears more than once",
                w[0]
            )));
        }
        Ok(())
    }
}

/// Maps a graded label in `0..=4` to binary relevance: 1 iff the grade exceeds 2.
pub fn binarize(graded_label: i64) -> Result<u8> {
    if !(0..=i64::from(MAX_GRADE)).contains(&graded_label) {
        return Err(Error::LabelOutOfRange(graded_label));
    }
    Ok(u8::from(graded_label > 2))
}

/// Parses the LTR text format (`<label> qid:<q> <fid>:<val> ... [# comment]`).
///
/// Feature ids are 1-based and may be sparse; every document is padded with
/// zeros to the largest feature id seen in the input. Documents keep file
/// order, and each qid must occupy one contiguous block of lines.
pub fn parse_ltr(text: &str) -> Result<Vec<Query>> {
    struct Raw {
        label: u8,
        feats: Vec<(usize, f64)>,
    }
    let mut blocks: Vec<(u64, Vec<Raw>)> = Vec::new();
    let mut max_fid = 0usize;

    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw_line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let perr = |msg: String| Error::Parse { line: line_no, msg };
        let mut tokens = line.split_whitespace();
        let label_tok = tokens.next().ok_or_else(|| perr("missing label".into()))?;
        let label: i64 = label_tok
            .parse()
            .map_err(|_| perr(format!("bad label `{label_tok}`")))?;
        let label = binarize(label)
            .map(|_| label as u8)
            .map_err(|_| perr(format!("label {label} outside 0..=4")))?;
        let qid_tok = tokens.next().ok_or_else(|| perr("missing qid".into()))?;
        let qid: u64 = qid_tok
            .strip_prefix("qid:")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| perr(format!("bad qid token `{qid_tok}`")))?;

        let mut feats = Vec::new();
        let mut last_fid = 0usize;
        for tok in tokens {
            let (fid, val) = tok
                .split_once(':')
                .ok_or_else(|| perr(format!("bad feature token `{tok}`")))?;
            let fid: usize = fid
                .parse()
                .map_err(|_| perr(format!("bad feature id in `{tok}`")))?;
            if fid == 0 {
                return Err(perr("feature ids are 1-based".into()));
            }
            if fid <= last_fid {
                return Err(perr(format!("feature id {fid} not increasing")));
            }
            let val: f64 = val
                .parse()
                .map_err(|_| perr(format!("bad feature value in `{tok}`")))?;
            last_fid = fid;
            max_fid = max_fid.max(fid);
            feats.push((fid, val));
        }

        match blocks.last_mut() {
            Some((q, docs)) if *q == qid => docs.push(Raw { label, feats }),
            _ => {
                if blocks.iter().any(|(q, _)| *q == qid) {
                    return Err(Error::NonContiguousQid { qid, line: line_no });
                }
                blocks.push((qid, vec![Raw { label, feats }]));
            }
        }
    }

    if blocks.is_empty() {
        return Err(Error::EmptyInput);
    }

    blocks
        .into_iter()
        .map(|(query_id, raws)| {
            let documents = raws
                .into_iter()
                .enumerate()
                .map(|(doc_id, raw)| {
                    let mut features = vec![0.0; max_fid];
                    for (fid, v) in raw.feats {
                        features[fid - 1] = v;
                    }
                    Document::new(doc_id, features, raw.label)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(Query {
                query_id,
                documents,
            })
        })
        .collect()
}

/// Writes queries in the LTR text format with six significant digits per feature.
pub fn write_ltr(queries: &[Query]) -> String {
    let mut out = String::new();
    for q in queries {
        for d in &q.documents {
            let _ = write!(out, "{} qid:{}", d.graded_label, q.query_id);
            for (i, v) in d.features.iter().enumerate() {
                let _ = write!(out, " {}:{}", i + 1, sig6(*v));
            }
            out.push('\n');
        }
    }
    out
}

/// Root-mean-square norm of the planted weight vector, so the signal part of
/// a latent score has standard deviation about 6 against noise 0.5.
pub const PLANTED_WEIGHT_NORM: f64 = 6.0;

/// Generates a synthetic dataset with a planted linear scorer.
///
/// Features are i.i.d. standard normal. The weight vector `w` is drawn once
/// with i.i.d. `N(0, PLANTED_WEIGHT_NORM² / feature_dim)` entries. Each
/// document's latent score is `w·x + N(0, 0.5²)` and its graded label is the dataset-wide quintile of that score, so exactly two
/// fifths of all documents (up to rounding) are binary-relevant. Queries are
/// split 70/15/15 in generation order.
pub fn generate_synthetic(
    n_queries: usize,
    docs_per_query: usize,
    feature_dim: usize,
    seed: u64,
) -> Result<Dataset> {
    if n_queries == 0 || docs_per_query == 0 || feature_dim == 0 {
        return Err(Error::InvalidArgument(
            "n_queries, docs_per_query and feature_dim must all be at least 1".into(),
        ));
    }
    let mut rng = rng_from_seed(seed);
    let scale = PLANTED_WEIGHT_NORM / libm::sqrt(feature_dim as f64);
    let w: Vec<f64> = (0..feature_dim)
        .map(|_| rng.sample::<f64, _>(StandardNormal) * scale)
        .collect();

    let total = n_queries * docs_per_query;
    let mut features = Vec::with_capacity(total);
    let mut latent = Vec::with_capacity(total);
    for _ in 0..total {
        let x: Vec<f64> = (0..feature_dim)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let s = dot(&w, &x) + SYNTHETIC_NOISE_SD * rng.sample::<f64, _>(StandardNormal);
        features.push(x);
        latent.push(s);
    }

    let mut order: Vec<usize> = (0..total).collect();
    order.sort_by(|&a, &b| latent[a].total_cmp(&latent[b]).then(a.cmp(&b)));
    let mut grades = vec![0u8; total];
    for (pos, &idx) in order.iter().enumerate() {
        grades[idx] = ((5 * pos) / total) as u8;
    }

    let mut features = features.into_iter();
    let mut queries = Vec::with_capacity(n_queries);
    for qid in 0..n_queries {
        let documents = (0..docs_per_query)
            .map(|doc_id| {
                let x = features.next().unwrap_or_default();
                Document::new(doc_id, x, grades[qid * docs_per_query + doc_id])
            })
            .collect::<Result<Vec<_>>>()?;
        queries.push(Query {
            query_id: qid as u64,
            documents,
        });
    }

    let n_train = libm::round(0.70 * n_queries as f64) as usize;
    let n_val = (libm::round(0.15 * n_queries as f64) as usize).min(n_queries - n_train);
    let test = queries.split_off(n_train + n_val);
    let validation = queries.split_off(n_train);
    Dataset::new(queries, validation, test, feature_dim)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binarize_threshold() {
        assert_eq!(binarize(3), Ok(1));
        assert_eq!(binarize(4), Ok(1));
        assert_eq!(binarize(2), Ok(0));
        assert_eq!(binarize(0), Ok(0));
        assert_eq!(binarize(5), Err(Error::LabelOutOfRange(5)));
        assert_eq!(binarize(-1), Err(Error::LabelOutOfRange(-1)));
    }

    #[test]
    fn parse_sparse_line() {
        let qs = parse_ltr("3 qid:7 1:0.5 3:1.0\n").unwrap();
        assert_eq!(qs.len(), 1);
        assert_eq!(qs[0].query_id, 7);
        let d = &qs[0].documents[0];
        assert_eq!(d.features, vec![0.5, 0.0, 1.0]);
        assert_eq!(d.graded_label, 3);
        assert_eq!(d.binary_label, 1);
    }

    #[test]
    fn parse_label_two_is_irrelevant() {
        let qs = parse_ltr("2 qid:7 1:0.1 # a comment\n").unwrap();
        assert_eq!(qs[0].documents[0].binary_label, 0);
    }

    #[test]
    fn parse_pads_to_global_max_fid() {
        let qs = parse_ltr("0 qid:1 2:1\n1 qid:1 1:1\n4 qid:2 5:2.5\n").unwrap();
        assert_eq!(qs.len(), 2);
        assert!(qs
            .iter()
            .flat_map(|q| &q.documents)
            .all(|d| d.features.len() == 5));
        assert_eq!(qs[0].documents[1].doc_id, 1);
        assert_eq!(qs[1].documents[0].features[4], 2.5);
    }

    #[test]
    fn parse_rejects_non_contiguous_blocks() {
        let err = parse_ltr("1 qid:1 1:0\n1 qid:2 1:0\n1 qid:1 1:0\n").unwrap_err();
        assert_eq!(err, Error::NonContiguousQid { qid: 1, line: 3 });
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let err = parse_ltr("1 qid:1 1:0\n\nx qid:1 1:0\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }));
        let err = parse_ltr("1 qid:1 1:0\n7 qid:1 1:0\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        let err = parse_ltr("1 1:0\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
        let err = parse_ltr("1 qid:1 0:3\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
        let err = parse_ltr("1 qid:1 1:abc\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn parse_empty_is_error() {
        assert_eq!(parse_ltr(""), Err(Error::EmptyInput));
        assert_eq!(parse_ltr("# only a comment\n\n"), Err(Error::EmptyInput));
    }

    #[test]
    fn synthetic_is_deterministic() {
        let a = generate_synthetic(10, 5, 8, 1).unwrap();
        let b = generate_synthetic(10, 5, 8, 1).unwrap();
        assert_eq!(a, b);
        assert_eq!(write_ltr(&a.train), write_ltr(&b.train));
        let c = generate_synthetic(10, 5, 8, 2).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn synthetic_split_sizes() {
        let ds = generate_synthetic(100, 3, 2, 9).unwrap();
        assert_eq!(
            (ds.train.len(), ds.validation.len(), ds.test.len()),
            (70, 15, 15)
        );
        let ds = generate_synthetic(10, 3, 2, 9).unwrap();
        assert_eq!(ds.train.len() + ds.validation.len() + ds.test.len(), 10);
    }

    #[test]
    fn synthetic_positive_rate_is_two_fifths() {
        let ds = generate_synthetic(1000, 20, 8, 1).unwrap();
        let (mut pos, mut n) = (0usize, 0usize);
        for q in ds.train.iter().chain(&ds.validation).chain(&ds.test) {
            for d in &q.documents {
                pos += usize::from(d.binary_label);
                n += 1;
            }
        }
        let rate = pos as f64 / n as f64;
        assert!((rate - 0.40).abs() <= 0.02, "rate {rate}");
    }

    #[test]
    fn synthetic_rejects_zero_counts() {
        assert!(generate_synthetic(10, 0, 8, 1).is_err());
        assert!(generate_synthetic(0, 5, 8, 1).is_err());
        assert!(generate_synthetic(10, 5, 0, 1).is_err());
    }

    #[test]
    fn write_then_parse_round_trips() {
        let ds = generate_synthetic(12, 4, 3, 5).unwrap();
        let text = write_ltr(&ds.train);
        let back = parse_ltr(&text).unwrap();
        assert_eq!(back.len(), ds.train.len());
        for (a, b) in ds.train.iter().zip(&back) {
            assert_eq!(a.query_id, b.query_id);
            for (da, db) in a.documents.iter().zip(&b.documents) {
                assert_eq!(da.graded_label, db.graded_label);
                for (x, y) in da.features.iter().zip(&db.features) {
                    assert!((x - y).abs() <= 1e-5 * x.abs());
                }
            }
        }
        assert_eq!(write_ltr(&back), text);
    }
}
