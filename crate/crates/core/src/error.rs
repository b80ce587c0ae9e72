use thiserror::Error;

use crate::svr::SvrModel;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or inconsistent input: shapes, non-finite values, bad configs, unreadable files.
    #[error("input error: {0}")]
    Input(String),

    /// The SVR solver hit its iteration cap. The best iterate is kept for inspection.
    #[error("SVR solver did not converge after {iterations} iterations (KKT gap {gap:.3e})")]
    Convergence {
        iterations: usize,
        gap: f64,
        best: Box<SvrModel>,
    },

    /// A numeric operation was undefined or ill-conditioned.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// An internal invariant did not hold.
    #[error("internal invariant violated: {0}")]
    Invariant(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Short machine-readable category used in CLI error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Input(_) | Error::Io { .. } => "input",
            Error::Convergence { .. } => "convergence",
            Error::Numeric(_) => "numeric",
            Error::Invariant(_) => "invariant",
        }
    }

    /// Process exit code: 1 input, 2 convergence/numeric, 3 internal invariant.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Input(_) | Error::Io { .. } => 1,
            Error::Convergence { .. } | Error::Numeric(_) => 2,
            Error::Invariant(_) => 3,
        }
    }
}
