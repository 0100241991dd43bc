use thiserror::Error;

use crate::logit::LogitError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised anywhere in the estimation pipeline.
///
/// Variants fall into three families (configuration, data, estimation) which
/// the command line maps onto distinct exit codes via [`Error::kind`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("unknown covariate `{0}`")]
    UnknownCovariate(String),

    #[error("design requires control-function values but none were supplied")]
    MissingControl,

    #[error("control-function values supplied to a design without control terms")]
    UnexpectedControl,

    #[error("non-finite value in covariate `{name}` at observation {index}")]
    NonFinite { name: String, index: usize },

    #[error("invalid sample: {0}")]
    Data(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("collinear design columns: {}", .columns.join(", "))]
    Collinear { columns: Vec<String> },

    #[error("logit fit failed at threshold {threshold}: {source}")]
    Threshold {
        threshold: f64,
        #[source]
        source: LogitError,
    },

    #[error(transparent)]
    Logit(#[from] LogitError),

    #[error("no nonworkers in group `{0}`; the selection threshold at zero hours is unidentified")]
    NoNonworkers(String),

    #[error("trimming rule leaves no observations")]
    EmptyTrim,

    #[error("no observations pass the selection rule")]
    EmptySelection,

    #[error("the outcome fit carries no distribution regression")]
    MissingLdsf,

    #[error("probability {0} outside (0, 1)")]
    Probability(f64),

    #[error("{stage} failed for group `{group}`: {source}")]
    Stage {
        stage: &'static str,
        group: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{failed} of {total} bootstrap replicates failed")]
    Bootstrap { failed: usize, total: usize },
}

/// Coarse classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Estimation,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::Json(_) => ErrorKind::Config,
            Error::UnknownCovariate(_)
            | Error::MissingControl
            | Error::UnexpectedControl
            | Error::Dimension { .. } => ErrorKind::Config,
            Error::NonFinite { .. }
            | Error::Data(_)
            | Error::Io { .. }
            | Error::Csv(_)
            | Error::NoNonworkers(_)
            | Error::EmptyTrim => ErrorKind::Data,
            Error::Stage { source, .. } => match source.kind() {
                ErrorKind::Config => ErrorKind::Config,
                ErrorKind::Data => ErrorKind::Data,
                ErrorKind::Estimation => ErrorKind::Estimation,
            },
            _ => ErrorKind::Estimation,
        }
    }

    pub(crate) fn stage(stage: &'static str, group: &str, source: Error) -> Error {
        Error::Stage {
            stage,
            group: group.to_string(),
            source: Box::new(source),
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Error {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
