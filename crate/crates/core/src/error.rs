use std::path::PathBuf;

use crate::virt::VirtError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Malformed workload, trace or config text.
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },

    /// A value violates a domain invariant; the message names the field.
    #[error("{0}")]
    Invalid(String),

    #[error("missing required key `{0}`")]
    MissingKey(&'static str),

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error("unschedulable under static allocation: {0}")]
    Unschedulable(String),

    #[error("unschedulable within virtual capacity: {0}")]
    ExceedsVirtualCapacity(String),

    #[error("simulation did not terminate: {0}")]
    Stalled(String),

    #[error(transparent)]
    Virt(#[from] VirtError),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("config: {0}")]
    Config(String),

    /// A sweep point failed; identifies the (kernel, preset, policy, spec) tuple.
    #[error("{kernel} on {preset} under {policy} at {spec}: {source}")]
    SweepPoint {
        kernel: String,
        preset: String,
        policy: String,
        spec: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
