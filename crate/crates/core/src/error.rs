use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("input shape error: {0}")]
    InputShape(String),

    #[error("input {0:?} is not a member of the finite input set")]
    InvalidInput(Vec<f64>),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("sampling failed at x={x:?}, u={u:?}, w={w:?}: {reason}")]
    Sampling {
        x: Vec<f64>,
        u: Vec<f64>,
        w: Vec<f64>,
        reason: String,
    },

    #[error("dataset does not cover input index {0}")]
    IncompleteDataset(usize),

    #[error("abstraction failed at state {state}, input {input}, disturbance {dist}: {reason}")]
    Abstraction {
        state: usize,
        input: usize,
        dist: usize,
        reason: String,
    },

    #[error("index out of range: {0}")]
    Index(String),

    #[error("assembly error: {0}")]
    Assembly(String),

    #[error("no gamma in the grid yields a feasible program; most violated row: {row} (violation {violation:e})")]
    Infeasible { row: String, violation: f64 },

    #[error("linear program error: {0}")]
    Lp(String),

    #[error("parameter out of domain: {0}")]
    Domain(String),

    #[error("state {cell:?} is outside the winning region")]
    Uncontrollable { cell: Option<usize> },

    #[error("malformed artifact {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("missing artifact {0}")]
    MissingArtifact(PathBuf),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}
