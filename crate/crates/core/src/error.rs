use std::path::PathBuf;

use thiserror::Error;

use crate::data::Modality;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("modality mismatch: expected {expected}, found {found}{}", context_suffix(.context))]
    ModalityMismatch {
        expected: Modality,
        found: Modality,
        context: String,
    },

    #[error("dimension mismatch{}: expected {expected}, found {found}", context_suffix(.context))]
    DimensionMismatch {
        expected: usize,
        found: usize,
        context: String,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("non-finite gradient: {0}")]
    NonFiniteGradient(String),

    #[error("non-finite loss: {0}")]
    NonFiniteLoss(String),

    #[error("ranked list needs at least 2 entries, got {0}")]
    ListTooShort(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("block size must be at least 1")]
    InvalidBlockSize,

    #[error("optimal transport solver failed: {0}")]
    SolverFailure(String),

    #[error("sinkhorn did not converge after {iterations} iterations (marginal error {marginal_error:e})")]
    NotConverged {
        iterations: usize,
        marginal_error: f64,
    },

    #[error("representative subset of {requested} requested from {available} samples")]
    SubsetTooLarge { requested: usize, available: usize },

    #[error("budget {requested} exceeds {available} scored samples")]
    BudgetTooLarge { requested: usize, available: usize },

    #[error("representative subset is empty")]
    EmptySubset,

    #[error("candidate set is empty")]
    EmptyCandidates,

    #[error("win rate undefined: every judgment is a tie")]
    AllTies,

    #[error("duplicate sample id {0:?}")]
    DuplicateId(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("sample {id}: {source}")]
    Sample {
        id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{} sample(s) failed, first: {}", .0.len(), .0.first().map(ToString::to_string).unwrap_or_default())]
    Batch(Vec<Error>),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn context_suffix(context: &str) -> String {
    if context.is_empty() {
        String::new()
    } else {
        format!(" ({context})")
    }
}

impl Error {
    pub(crate) fn dim(expected: usize, found: usize, context: impl Into<String>) -> Self {
        Error::DimensionMismatch {
            expected,
            found,
            context: context.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn in_stage(self, stage: impl Into<String>) -> Self {
        Error::Stage {
            stage: stage.into(),
            source: Box::new(self),
        }
    }

    pub fn for_sample(self, id: impl Into<String>) -> Self {
        Error::Sample {
            id: id.into(),
            source: Box::new(self),
        }
    }
}
