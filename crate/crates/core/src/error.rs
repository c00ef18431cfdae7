use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure class, used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    Numerical,
    Infeasible,
    Incompatible,
    Io,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),

    #[error("{what} {value} out of range (limit {limit})")]
    Range { what: &'static str, value: u64, limit: u64 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("degenerate target: channel {channel} has variance {variance:e} below {epsilon:e}")]
    DegenerateTarget { channel: usize, variance: f64, epsilon: f64 },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("infeasible: {metric} budget {budget} is below the sum of per-block minima {total} (per-block minima: {per_block:?})")]
    Infeasible { metric: String, budget: f64, total: f64, per_block: Vec<f64> },

    #[error("infeasible: no selection satisfies all budgets jointly")]
    InfeasibleJoint,

    #[error("block {block} has no candidates after filtering")]
    EmptyBlock { block: usize },

    #[error("brute force refused: {combinations} combinations exceed the cap of {cap}")]
    CapExceeded { combinations: u128, cap: u128 },

    #[error("incompatible artifacts: {0}")]
    Incompatible(String),

    #[error("no latency measurement for block {block}, subnet {subnet}")]
    MissingMeasurement { block: usize, subnet: u64 },

    #[error("missing manifest in {}", .0.display())]
    MissingManifest(PathBuf),

    #[error("{}:{line}: {msg}", file.display())]
    Parse { file: PathBuf, line: usize, msg: String },

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Validation(_)
            | Error::Range { .. }
            | Error::Shape(_)
            | Error::Parse { .. }
            | Error::MissingMeasurement { .. }
            | Error::CapExceeded { .. } => ErrorKind::Validation,
            Error::DegenerateTarget { .. } | Error::Numerical(_) => ErrorKind::Numerical,
            Error::Infeasible { .. } | Error::InfeasibleJoint | Error::EmptyBlock { .. } => {
                ErrorKind::Infeasible
            }
            Error::Incompatible(_) | Error::MissingManifest(_) => ErrorKind::Incompatible,
            Error::Io { .. } => ErrorKind::Io,
            Error::Stage { source, .. } => source.kind(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage { stage, source: Box::new(self) }
    }

    pub fn is_infeasible(&self) -> bool {
        self.kind() == ErrorKind::Infeasible
    }
}
