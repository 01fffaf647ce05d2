use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("column {0:?} not found in the header")]
    MissingColumn(String),

    #[error("row {row}, column {column:?}: {value:?} is not a finite number")]
    NonNumericCell { row: usize, column: String, value: String },

    #[error("no rows left after filtering")]
    EmptyAfterFiltering,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("unsupported fit file schema {0:?}")]
    Schema(String),

    #[error("fit did not converge")]
    NotConverged,

    #[error(transparent)]
    Core(#[from] sievi::Error),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// 1 usage, 2 data, 3 convergence.
    pub fn exit_code(&self) -> u8 {
        use sievi::Error as E;
        match self {
            CliError::Usage(_) => 1,
            CliError::NotConverged => 3,
            CliError::Core(e) => match e {
                E::DidNotConverge { .. } | E::LineSearchFailed | E::AllCellsFailed | E::NotPositiveDefinite { .. } => 3,
                E::InvalidConfig(_)
                | E::InvalidLevel(_)
                | E::InvalidTau(_)
                | E::InvalidLevels { .. }
                | E::TooFewKnots(_)
                | E::OrderExceedsDegree { .. }
                | E::KOutOfRange { .. } => 1,
                _ => 2,
            },
            _ => 2,
        }
    }
}
