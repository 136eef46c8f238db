use thiserror::Error;

use crate::advantage::Group;
use crate::policy::TokenId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid prompt: {0}")]
    InvalidPrompt(String),

    #[error("token {token} is out of range for vocabulary of size {vocab_size}")]
    InvalidToken { token: TokenId, vocab_size: usize },

    #[error("state {state} is out of range ({state_count} states)")]
    InvalidState { state: usize, state_count: usize },

    #[error("invalid vocabulary: {0}")]
    InvalidVocab(String),

    #[error("alignment mismatch: {0}")]
    Alignment(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("contract violation: {0}")]
    ContractViolation(String),

    #[error("penalty registration failed: {0}")]
    Registration(String),

    #[error("unknown penalty kind `{0}`")]
    UnknownPenalty(String),

    /// Dynamic sampling ran out of rounds. The accepted groups are kept so a
    /// caller can inspect or salvage them.
    #[error("partial batch: accepted {} of {needed} groups after {rounds} sampling rounds", accepted.len())]
    PartialBatch {
        accepted: Vec<Group>,
        needed: usize,
        rounds: usize,
    },

    #[error("empty input")]
    EmptyInput,

    #[error("domain error: {0}")]
    Domain(String),

    #[error("incompatible snapshots: {0}")]
    Incompatible(String),

    #[error("malformed checkpoint header: {0}")]
    MalformedHeader(String),

    #[error("truncated checkpoint payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },

    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },

    /// A record in an input file could not be read.
    #[error("{path}:{line}: {message}")]
    Input {
        path: String,
        line: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
