use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("config: missing required key `{0}`")]
    MissingKey(String),
    #[error("config: key `{0}` given more than once")]
    DuplicateKey(String),
    #[error("config: unknown key `{0}`")]
    UnknownKey(String),
    #[error("config: line {line}: expected `key = value`, got `{text}`")]
    Syntax { line: usize, text: String },
    #[error("invalid value for `{key}`: {reason}")]
    InvalidValue { key: String, reason: String },

    #[error("unservable device{0}: zero channel gain")]
    Unservable(String),
    #[error("energy causality violated: drawing {requested} J from a battery holding {available} J")]
    CausalityViolation { requested: f64, available: f64 },

    #[error("instance too large for exhaustive search: {count} candidate assignments exceed cap {cap}")]
    InstanceTooLarge { count: u128, cap: u128 },
    #[error("{0} values given but only {1} spreading factors are available")]
    TooManyElements(usize, usize),
    #[error("invalid assignment: {0}")]
    InvalidAssignment(String),

    #[error("planner input: {0}")]
    PlannerInput(String),
    #[error("state space too large: {states} states exceed cap {cap}")]
    StateSpaceTooLarge { states: usize, cap: usize },

    #[error("non-finite loss during training at update {update}: {detail}")]
    NonFiniteLoss { update: usize, detail: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("scenario: {0}")]
    Scenario(String),
    #[error("parse error in {what}: {detail}")]
    Parse { what: String, detail: String },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn invalid(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidValue {
            key: key.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn parse(what: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Parse {
            what: what.into(),
            detail: detail.into(),
        }
    }
}
