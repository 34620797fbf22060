use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke a documented precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },

    #[error(
        "no scripted response for task `{task}` key `{key}` (round {round:?}, partner {partner:?})"
    )]
    UnknownScriptKey {
        task: String,
        key: String,
        round: Option<u32>,
        partner: Option<String>,
    },

    #[error("model returned no usable {what}")]
    GenerationEmpty { what: &'static str },

    #[error("need {needed} questions but only {available} are available after fallback")]
    InsufficientQuestions { needed: usize, available: usize },

    #[error("answer extraction failed for agent {agent}: {reason}")]
    Extraction { agent: usize, reason: String },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("duplicate record id `{0}`")]
    DuplicateId(String),

    #[error("metric undefined: {0}")]
    Undefined(&'static str),

    #[error("need at least {needed} records, got {got}")]
    TooFewRecords { needed: usize, got: usize },

    #[error("invalid scenario: {0}")]
    Scenario(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Transport errors are the only ones worth retrying.
    pub fn is_retriable(&self) -> bool {
        matches!(self, Error::Transport { .. })
    }
}
