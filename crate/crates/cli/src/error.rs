use hetdetect_core::HetError;
use std::path::PathBuf;
use thiserror::Error;

/// Problems with input data files or the block manifest.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("file not found: {}", .0.display())]
    FileNotFound(PathBuf),

    #[error("schema mismatch in block '{block}': missing column '{column}'")]
    SchemaMismatch { block: String, column: String },

    #[error("non-numeric cell in block '{block}' at row {row}, column '{column}': {value:?}")]
    NonNumericCell {
        block: String,
        row: usize,
        column: String,
        value: String,
    },

    #[error("block '{0}' has no data rows")]
    EmptyBlock(String),

    #[error("invalid manifest: {0}")]
    InvalidManifest(String),

    #[error("block '{block}': {source}")]
    Block {
        block: String,
        #[source]
        source: HetError,
    },

    #[error("csv error in block '{block}': {source}")]
    Csv {
        block: String,
        #[source]
        source: csv::Error,
    },
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Data(#[from] DataError),

    #[error("{0}")]
    Core(#[from] HetError),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    /// 0 success, 2 usage or configuration, 3 input data, 4 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Io { .. } => 2,
            CliError::Data(DataError::Block { source, .. }) if source.is_numerical() => 4,
            CliError::Data(_) => 3,
            CliError::Core(e) if e.is_numerical() => 4,
            CliError::Core(HetError::Domain(_)) => 2,
            CliError::Core(_) => 3,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
