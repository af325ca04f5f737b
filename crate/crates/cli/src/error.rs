use std::path::PathBuf;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] noisylab_core::Error),

    #[error("invalid input: {0}")]
    Usage(String),

    #[error("tolerance exceeded: {0}")]
    Tolerance(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }

    /// 0 success, 1 validation, 2 numerical tolerance, 3 IO.
    pub fn exit_code(&self) -> i32 {
        use noisylab_core::Error as E;
        match self {
            CliError::Usage(_) => 1,
            CliError::Tolerance(_) => 2,
            CliError::Io { .. } => 3,
            CliError::Core(e) => match e {
                E::Validation(_) | E::Parse { .. } | E::Shape(_) => 1,
                E::Numerical(_) => 2,
                E::Io { .. } => 3,
            },
        }
    }
}
