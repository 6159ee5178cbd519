use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the simulator, optimizer, and training stack.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument fell outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Configuration failed validation.
    #[error("configuration error: {0}")]
    Config(String),

    /// Vector or matrix dimensions disagree.
    #[error("shape error: expected {expected}, got {actual}")]
    Shape { expected: usize, actual: usize },

    /// No candidate ⟨mode, power⟩ pair satisfies the decode threshold.
    #[error("infeasible problem: {0}")]
    Infeasible(String),

    /// The Pareto front is smaller than the requested number of actions.
    #[error("front has {available} solutions but {requested} were requested; use a smaller action count")]
    FrontTooSmall { available: usize, requested: usize },

    /// A policy produced an action index outside the action space.
    #[error("action index {index} out of range for action space of size {size}")]
    ActionOutOfRange { index: usize, size: usize },

    /// Node clocks disagree: an overheard entry is newer than the decision time.
    #[error("clock skew: entry acquired at {acquired}s is later than decision time {now}s")]
    ClockSkew { acquired: f64, now: f64 },

    /// Training produced a non-finite loss.
    #[error("training diverged at episode {episode}: loss = {loss}")]
    Divergence { episode: usize, loss: f64 },

    /// A checkpoint or table file could not be parsed.
    #[error("malformed {what} in {path}: {detail}")]
    Format { what: &'static str, path: PathBuf, detail: String },

    #[error("unknown policy `{0}`")]
    UnknownPolicy(String),

    #[error("unknown metric `{0}`")]
    UnknownMetric(String),

    #[error("missing checkpoint: {0}")]
    MissingCheckpoint(PathBuf),

    #[error("nothing to export: {0}")]
    EmptyResults(String),

    /// A bookkeeping identity of a finished episode does not hold.
    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("empty minibatch")]
    EmptyBatch,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Short category label, used by the CLI for exit codes and messages.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Domain(_) | Error::Shape { .. } | Error::ActionOutOfRange { .. } => "input",
            Error::Config(_) | Error::UnknownPolicy(_) | Error::UnknownMetric(_) => "config",
            Error::Infeasible(_) | Error::FrontTooSmall { .. } => "optimization",
            Error::ClockSkew { .. } | Error::Invariant(_) => "simulation",
            Error::Divergence { .. } | Error::EmptyBatch => "training",
            Error::Format { .. } | Error::MissingCheckpoint(_) | Error::EmptyResults(_) => "data",
            Error::Io(_) | Error::Csv(_) => "io",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
