use std::path::PathBuf;

/// Everything the command-line front end can fail with.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{0}")]
    Config(String),

    #[error("{path}: {message}")]
    Data { path: String, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Store(String),

    #[error(transparent)]
    Model(#[from] stdglm::Error),
}

impl CliError {
    /// Short machine-readable category printed in the error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Usage(_) => "usage",
            Self::Config(_) => "config",
            Self::Data { .. } => "data",
            Self::Io { .. } => "io",
            Self::Store(_) => "store",
            Self::Model(e) => match e {
                stdglm::Error::Config(_) => "config",
                stdglm::Error::Coverage { .. } | stdglm::Error::Mesh(_) => "mesh",
                _ => "model",
            },
        }
    }

    /// Process exit status: 2 for problems with the invocation or its
    /// inputs, 1 for failures during computation.
    pub fn exit_code(&self) -> i32 {
        match self.kind() {
            "usage" | "config" | "data" => 2,
            _ => 1,
        }
    }

    /// One-line report: `error: kind=<kind> message=<text>`.
    pub fn report(&self) -> String {
        let message = self.to_string().replace(['\n', '\r'], " ");
        format!("error: kind={} message={message}", self.kind())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io { path: path.into(), source }
    }

    pub fn data(path: impl std::fmt::Display, message: impl Into<String>) -> Self {
        Self::Data { path: path.to_string(), message: message.into() }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn report_is_a_single_line() {
        let e = CliError::Config("bad\nvalue".into());
        assert_eq!(e.report(), "error: kind=config message=bad value");
        assert_eq!(e.exit_code(), 2);
        let m: CliError = stdglm::Error::Numerical("nan".into()).into();
        assert_eq!(m.kind(), "model");
        assert_eq!(m.exit_code(), 1);
    }
}
