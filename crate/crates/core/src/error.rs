use thiserror::Error;

/// Errors shared by every stage of the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("point ({x}, {y}) is outside the domain")]
    OutsideDomain { x: f64, y: f64 },
    #[error("construction failed: {0}")]
    Construction(String),
    #[error("mesh refinement failed: {0}")]
    Refinement(String),
    #[error("assembly failed: {0}")]
    Assembly(String),
    #[error("eigensolver did not converge: {message} (best residuals {residuals:?})")]
    Solver { message: String, residuals: Vec<f64> },
    #[error("evaluation failed: {0}")]
    Evaluation(String),
    #[error("degenerate eigenvector: {0}")]
    DegenerateEigenvector(String),
    #[error("ambiguous eigenvector sign: |c2| = {c2:e} is below the threshold {threshold:e}")]
    AmbiguousSign { c2: f64, threshold: f64 },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed artifact {path}: {message}")]
    Artifact { path: String, message: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
