use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),

    #[error("check failed: {0}")]
    Check(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] enk_core::Error),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// 0 success, 1 usage or configuration, 2 numerical check, 3 I/O.
    pub fn exit_code(&self) -> i32 {
        use enk_core::Error as E;
        match self {
            CliError::Usage(_) => 1,
            CliError::Check(_) => 2,
            CliError::Io { .. } => 3,
            CliError::Core(e) => match e {
                E::File { .. } | E::Format { .. } | E::FormatRow { .. } => 3,
                E::NonFinite(_) => 2,
                _ => 1,
            },
        }
    }
}
