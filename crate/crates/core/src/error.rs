use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid vocabulary: {0}")]
    InvalidVocabulary(String),

    #[error("invalid token sequence: {0}")]
    InvalidSequence(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("model contract violated: {0}")]
    ModelContract(String),

    #[error("sampling rule {0} has no per-step allowed set")]
    UnsupportedRule(String),

    #[error("search budget exceeded: {0}")]
    Budget(String),

    #[error("pricing error: {0}")]
    Pricing(String),

    #[error("calibration error: {0}")]
    Calibration(String),

    #[error("margin undefined: {0}")]
    UndefinedMargin(String),

    #[error("integrity violation: {0}")]
    Integrity(String),

    #[error("gadget construction error: {0}")]
    Construction(String),

    #[error("cannot parse {what} from {input:?}: {reason}")]
    Parse {
        what: &'static str,
        input: String,
        reason: String,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn parse(what: &'static str, input: &str, reason: impl Into<String>) -> Self {
        Error::Parse {
            what,
            input: input.to_string(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Process exit status for the command-line tool.
    ///
    /// 1 is reserved for usage errors, 2 for integrity or contract violations,
    /// 3 for exhausted search budgets.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Budget(_) => 3,
            Error::Parse { .. } | Error::Config(_) | Error::UnsupportedRule(_) | Error::Io { .. } => 1,
            _ => 2,
        }
    }
}
