use thiserror::Error;

use crate::analysis::FieldKind;
use crate::ledger::Rejection;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GroupError {
    #[error("scalar is zero or not reduced modulo the group order")]
    InvalidScalar,
    #[error("bytes do not encode a valid group point")]
    InvalidPoint,
    #[error("expected 64 lowercase hex characters")]
    BadHex,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error(transparent)]
    Group(#[from] GroupError),
    #[error("no valid stealth address after {draws} transaction-key draws")]
    RetryBudgetExceeded { draws: u32 },
    #[error("sequence number {0} outside [0, 999]")]
    SequenceOutOfRange(u32),
}

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("message of {len} bytes exceeds the {max}-byte session limit; split it across sessions")]
    MessageTooLarge { len: usize, max: usize },
    #[error("reassembled frame is malformed: {0}")]
    MalformedFrame(&'static str),
    #[error("session already started")]
    AlreadyStarted,
    #[error(transparent)]
    Codec(#[from] CodecError),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("parse error at byte offset {offset}: {message}")]
pub struct ParseError {
    pub offset: usize,
    pub message: String,
}

impl ParseError {
    pub(crate) fn new(offset: usize, message: impl Into<String>) -> Self {
        ParseError { offset, message: message.into() }
    }
}

#[derive(Debug, Error)]
pub enum LedgerError {
    #[error("transaction rejected: {0}")]
    Rejected(Rejection),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("chain integrity check failed at height {height}: {reason}")]
    Integrity { height: u64, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("need {needed} {kind} fields but only {available} are available")]
    Insufficient { kind: FieldKind, needed: usize, available: usize },
    #[error("distribution has no observations")]
    EmptyDistribution,
    #[error("invalid experiment configuration: {0}")]
    InvalidConfig(String),
    #[error("field string contains a non-hex character")]
    NonHex,
    #[error(transparent)]
    Codec(#[from] CodecError),
}
