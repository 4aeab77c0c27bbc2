use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{}{}: {message}", path.display(), line.map(|l| format!(":{l}")).unwrap_or_default())]
    Config { path: PathBuf, line: Option<usize>, message: String },
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Numerical(String),
    #[error("{context}: {source}")]
    Io { context: String, source: std::io::Error },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Lib(#[from] layertomo::Error),
}

impl CliError {
    /// 1 for anything the user can fix in the input, 2 for numerical failure.
    pub fn exit_code(&self) -> i32 {
        use layertomo::Error as E;
        match self {
            CliError::Numerical(_) => 2,
            CliError::Lib(E::Diverged { .. } | E::UnstableStep { .. } | E::NoSingleOverlapRegion { .. }) => 2,
            _ => 1,
        }
    }

    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        CliError::Io { context: context.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
