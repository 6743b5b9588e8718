use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// One message per violated settings rule.
    #[error("invalid settings: {}", .0.join("; "))]
    InvalidSettings(Vec<String>),

    #[error("degenerate design space: every start ended with a singular information matrix; add more choice sets or reduce the number of parameters")]
    DegenerateDesignSpace,

    #[error("corrupt design: {0}")]
    CorruptDesign(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("design invariant violated: {0}")]
    Invariant(String),

    #[error("unsupported schema_version {0} (expected 1)")]
    SchemaVersion(u64),

    #[error("rank deficient design: column(s) {} are linearly dependent on the remaining covariates", .0.join(", "))]
    RankDeficient(Vec<String>),

    #[error("separation detected: coefficient {name} exceeded |{limit}| during iteration")]
    Separation { name: String, limit: f64 },

    #[error("price coefficient {0} is numerically zero; willingness to pay is undefined")]
    DegeneratePrice(String),

    #[error("survey is closed")]
    SurveyClosed,

    #[error("unknown session {0}")]
    UnknownSession(String),

    #[error("session {0} already completed every choice set")]
    SessionComplete(String),

    #[error("choice {choice} out of range: set has {n_alts} alternatives")]
    ChoiceOutOfRange { choice: usize, n_alts: usize },
}

impl Error {
    /// True for errors caused by the numerical behaviour of a fit rather than
    /// by malformed input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::RankDeficient(_)
                | Error::Separation { .. }
                | Error::DegeneratePrice(_)
                | Error::DegenerateDesignSpace
        )
    }
}
