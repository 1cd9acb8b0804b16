use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A configuration value violates its constraint. `key` names the field.
    #[error("invalid value for `{key}`: {reason}")]
    InvalidConfig { key: String, reason: String },

    /// Array shapes do not line up; usually a misconfigured pipeline.
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("local training shard for AP {ap_index} is empty")]
    EmptyShard { ap_index: usize },

    #[error("no updates to aggregate")]
    NoUpdates,

    #[error("aggregation weights sum to zero")]
    ZeroWeights,

    #[error("{solver} diverged at iteration {iteration}: {reason}")]
    Diverged {
        solver: &'static str,
        iteration: usize,
        reason: String,
    },

    #[error("non-finite value encountered in {stage}")]
    NonFinite { stage: &'static str },

    #[error("ROC rates undefined: need at least one positive and one negative truth")]
    UndefinedRates,

    #[error("malformed update payload: {0}")]
    MalformedUpdate(String),
}

impl Error {
    pub(crate) fn invalid(key: &str, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            key: key.to_string(),
            reason: reason.into(),
        }
    }
}
