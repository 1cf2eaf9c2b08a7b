use std::path::PathBuf;

use crate::expr::{EvalError, ParseError};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("solution kind {solution} does not match task kind {task}")]
    KindMismatch { task: String, solution: String },

    #[error("infeasible candidate at strain sample {sample} (eps = {strain}): {source}")]
    InfeasibleLaw {
        sample: usize,
        strain: f64,
        #[source]
        source: EvalError,
    },

    #[error("infeasible candidate: {0}")]
    Infeasible(String),

    #[error("index out of range: {0}")]
    OutOfRange(String),

    #[error("instance has {nodes} nodes; exhaustive search supports at most {limit}, supply oracle_length in the instance file")]
    SizeLimit { nodes: usize, limit: usize },

    #[error("{path}: line {line}: {message}")]
    InstanceParse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: {message}")]
    InstanceInvalid { path: PathBuf, message: String },

    #[error(transparent)]
    ExprParse(#[from] ParseError),

    #[error(transparent)]
    Eval(#[from] EvalError),

    #[error("model error: {0}")]
    Model(String),

    #[error("non-finite input: {0}")]
    NonFinite(&'static str),

    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },

    #[error("authentication failed: {0}")]
    Auth(String),

    #[error("malformed response: {0}")]
    MalformedResponse(String),

    #[error("iteration {iteration}: {source}")]
    AtIteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
