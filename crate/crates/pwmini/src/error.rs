//! Crate-wide error type.
//!
//! One enum covers all modules: the variants mirror the error contracts of
//! the public operations (rank/tag validation, shutdown, shape mismatches,
//! ledger misuse, infeasible planning, numerical invariant violations).

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("rank {rank} out of range for world of size {size}")]
    RankOutOfRange { rank: usize, size: usize },

    #[error("rank {rank} attempted to message itself")]
    SelfMessage { rank: usize },

    #[error("world shut down while rank {rank} was waiting on rank {src}")]
    WorldShutDown { rank: usize, src: usize },

    #[error("duplicate rank {rank} in subgroup member list")]
    DuplicateMember { rank: usize },

    #[error("tag {tag} exceeds the user tag limit {limit}")]
    TagOutOfRange { tag: u32, limit: u32 },

    #[error("expected a {expected} payload, received {got}")]
    ElementMismatch { expected: &'static str, got: &'static str },

    #[error("payload of {bytes} bytes is not a whole number of {elem} elements")]
    PayloadSize { bytes: usize, elem: &'static str },

    #[error("{what}: expected length {expected}, got {got}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("{what}: {detail}")]
    ShapeMismatch { what: &'static str, detail: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("memory ledger: label {label:?} is already live")]
    DuplicateLabel { label: String },

    #[error("memory ledger: label {label:?} is not live")]
    UnknownLabel { label: String },

    #[error("eigensolver failed: {0}")]
    Eigen(String),

    #[error("no process count <= {cap} fits the budget of {budget} bytes")]
    Infeasible { cap: u64, budget: u64 },

    #[error("numerical invariant violated: {0}")]
    Numerics(String),

    #[error("a rank panicked: {0}")]
    RankPanicked(String),

    #[error("malformed file: {0}")]
    FileFormat(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
