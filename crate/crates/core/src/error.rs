use thiserror::Error;

/// Errors raised by model construction, the sampler and the predictors.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("parameter out of domain: {0}")]
    Domain(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("ill-conditioned matrix: {0}")]
    Conditioning(String),

    #[error("mesh error: {0}")]
    Mesh(String),

    #[error("site {site} at ({x}, {y}) is outside the mesh hull")]
    Coverage { site: usize, x: f64, y: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("iteration {iteration}: {source}")]
    Iteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn cond(msg: impl Into<String>) -> Self {
        Error::Conditioning(msg.into())
    }

    /// Short machine-readable tag for the error kind.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::Dimension(_) => "dimension",
            Error::Conditioning(_) => "conditioning",
            Error::Mesh(_) => "mesh",
            Error::Coverage { .. } => "coverage",
            Error::Numerical(_) => "numerical",
            Error::Config(_) => "config",
            Error::Iteration { source, .. } => source.kind(),
        }
    }
}
