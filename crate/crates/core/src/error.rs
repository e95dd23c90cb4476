use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid budget: kappa = {kappa} exceeds n = {n}")]
    InvalidBudget { kappa: usize, n: usize },

    #[error("budget infeasible: kappa = {kappa} must be below the alive count {alive}")]
    BudgetInfeasible { kappa: usize, alive: usize },

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("non-finite value at iteration {iter} in column `{column}`")]
    NonFinite { iter: usize, column: &'static str },

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("checkpoint version mismatch: file has version {found}, this build reads version {expected}")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("PLY schema error: missing required properties {}", .missing.join(", "))]
    PlySchema { missing: Vec<String> },

    #[error("PLY format error: {0}")]
    PlyFormat(String),

    #[error("unsupported image format: {}", .0.display())]
    UnsupportedImage(PathBuf),

    #[error("image codec error: {0}")]
    Image(#[from] image::ImageError),

    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
