use std::path::PathBuf;

/// Errors produced anywhere in the tracking pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("rank-deficient reference fit: {0}")]
    RankDeficient(String),

    #[error("Q-function is not convex in the control (h_uu = {h_uu:e})")]
    NonConvexInControl { h_uu: f64 },

    #[error("policy evaluation system is singular at iteration {iteration}")]
    SingularEvaluation { iteration: usize },

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("{what} did not converge within {iterations} iterations (last change {last_delta:e})")]
    NotConverged {
        what: &'static str,
        iterations: usize,
        last_delta: f64,
    },

    #[error("invalid cost: {0}")]
    InvalidCost(String),

    #[error("ball left the plate at step {step} (s = {position:.4} m)")]
    PlateEdge { step: usize, position: f64 },

    #[error("reference amplitude {amplitude:.4} m exceeds the plate half-width")]
    AmplitudeOutOfBounds { amplitude: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("policy iteration {iteration}: {source}")]
    Iteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

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
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// Wraps the error with the name of the pipeline stage it came from.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    pub fn in_iteration(self, iteration: usize) -> Self {
        Error::Iteration {
            iteration,
            source: Box::new(self),
        }
    }

    /// The innermost error, skipping stage labels.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } | Error::Iteration { source, .. } => source.root(),
            other => other,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| e.in_stage(stage))
    }
}
