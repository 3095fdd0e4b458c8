use alloc::string::String;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("empty input")]
    EmptyInput,
    #[error("non-contiguous qid blocks: qid {qid} reappears at line {line}")]
    NonContiguousQid { qid: u64, line: usize },
    #[error("graded label {0} outside 0..=4")]
    LabelOutOfRange(i64),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("rank {rank} outside 1..={max_rank}")]
    RankOutOfRange { rank: usize, max_rank: usize },
    #[error("uncorrectable rank {0}: alpha is zero")]
    UncorrectableRank(usize),
    #[error("zero examination probability at rank {0}")]
    ZeroPropensity(usize),
    #[error("invalid bias schedule: {0}")]
    InvalidSchedule(String),
    #[error("click log is empty")]
    EmptyLog,
    #[error("unknown query id {0}")]
    UnknownQuery(u64),
}

pub type Result<T> = core::result::Result<T, Error>;
