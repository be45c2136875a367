use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Core(#[from] lotstate::Error),

    #[error("{path}: {source}")]
    File { path: PathBuf, source: std::io::Error },

    #[error("{path}: {message}")]
    Document { path: PathBuf, message: String },

    #[error("{0}")]
    NotConverged(String),
}

impl CliError {
    /// 0 success, 1 i/o, 2 validation, 3 data, 4 convergence, 5 inversion.
    pub fn exit_code(&self) -> u8 {
        use lotstate::Error as E;
        match self {
            CliError::Usage(_) => 2,
            CliError::File { .. } => 1,
            CliError::Document { .. } => 3,
            CliError::NotConverged(_) => 4,
            CliError::Core(e) => match e {
                E::InvalidParameter { .. } => 2,
                E::Convergence { .. } => 4,
                E::Inversion(_) | E::Quadrature { .. } => 5,
                E::Io(_) => 1,
                E::Domain(_)
                | E::EmptyInput(_)
                | E::DimensionMismatch { .. }
                | E::Parse { .. }
                | E::Data(_)
                | E::UnknownLot(_)
                | E::Network(_) => 3,
            },
        }
    }
}

pub fn file_error(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
    let path = path.into();
    move |source| CliError::File { path, source }
}
