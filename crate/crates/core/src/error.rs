use thiserror::Error;

/// Errors raised anywhere in the inference pipeline.
#[derive(Error, Debug, Clone, PartialEq)]
pub enum Error {
    #[error("matrix is not positive definite (pivot {pivot} at permuted column {column})")]
    NotPositiveDefinite { column: usize, pivot: f64 },

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("constraint matrix M Q^-1 M^T is numerically singular")]
    SingularConstraint,

    #[error("invalid rectangle: {0}")]
    InvalidRectangle(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("degenerate triangle {index} (area {area:e})")]
    DegenerateTriangle { index: usize, area: f64 },

    #[error("mesh is not edge-conforming: {0}")]
    NonConformingMesh(String),

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("point ({x}, {y}) lies outside the mesh")]
    PointOutsideMesh { x: f64, y: f64 },

    #[error("invalid correlation {0}: |a| must be < 1")]
    InvalidCorrelation(f64),

    #[error("observation {0} is not in the support of the likelihood")]
    UnsupportedObservation(f64),

    #[error("mode search failed: {0}")]
    ModeSearchFailed(String),

    #[error("Newton iteration did not converge after {0} iterations")]
    NonConvergence(usize),

    #[error("probability {0} is outside (0, 1)")]
    InvalidProbability(f64),

    #[error("unknown tag {0:?}")]
    UnknownTag(String),

    #[error("data mismatch: {0}")]
    DataMismatch(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    /// Wraps the error with the pipeline stage it came from.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Strips stage labels.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
