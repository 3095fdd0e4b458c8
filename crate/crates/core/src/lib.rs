//! Counterfactual learning-to-rank under joint position bias and trust bias.
//!
//! The crate is `no_std` (with `alloc`) and holds every algorithmic piece of the
//! laboratory: the rank-based click model, the naive / IPS / Bayes-IPS / affine
//! estimators, regression EM for the bias parameters, and lambda-gradient
//! training of linear and MLP scorers. File IO, the experiment harness and the
//! CLI live in the `cltr-lab` companion crate.

#![no_std]
#![forbid(unsafe_code)]
// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod bias;
pub mod clicksim;
pub mod dataset;
pub mod em;
mod error;
pub mod estimators;
mod fmt;
pub mod metrics;
pub mod ranker;
pub mod train;

pub use bias::BiasSchedule;
pub use clicksim::{BudgetUnit, ClickLog, Session};
pub use dataset::{Dataset, Document, Query};
pub use em::{EmConfig, EmOutcome, ZetaParams};
pub use error::{Error, Result};
pub use estimators::{EstimatorKind, PseudoLabels};
pub use metrics::RankWeight;
pub use ranker::{Architecture, Head, Ranking, ScoringModel};
pub use train::{TrainConfig, TrainOutcome};

/// Seeded generator used throughout the crate.
pub type Rng = rand_chacha::ChaCha8Rng;

/// Builds the crate's generator from a 64-bit seed.
pub fn rng_from_seed(seed: u64) -> Rng {
    <Rng as rand::SeedableRng>::seed_from_u64(seed)
}

/// Derives an independent generator for item `index` of the stream rooted at `seed`.
pub fn rng_for_index(seed: u64, index: u64) -> Rng {
    let mut rng = rng_from_seed(seed);
    rng.set_stream(index);
    rng
}

/// A 64-bit seed for sub-task `tag` of the run rooted at `seed`.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    rand::RngCore::next_u64(&mut rng_for_index(seed, tag))
}
