use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("malformed manifest {}: {msg}", path.display())]
    Manifest { path: PathBuf, msg: String },

    #[error("malformed file {}: {msg}", path.display())]
    Format { path: PathBuf, msg: String },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("model {model}: row {row} sums to {sum}, expected 1 (tolerance 1e-4)")]
    RowSum { model: String, row: usize, sum: f64 },

    #[error("model {model}: row {row} column {col} holds {value}, outside [0, 1]")]
    EntryRange {
        model: String,
        row: usize,
        col: usize,
        value: f32,
    },

    #[error("label {label} at sample {index} is out of range for {classes} classes")]
    LabelRange {
        index: usize,
        label: u32,
        classes: usize,
    },

    #[error("label mismatch between pools {first} and {second} at sample {index}")]
    LabelMismatch {
        first: String,
        second: String,
        index: usize,
    },

    #[error("invalid pool: {0}")]
    InvalidPool(String),

    #[error("invalid genome: {0}")]
    InvalidGenome(String),

    #[error("cannot evaluate an empty cascade")]
    EmptyCascade,

    #[error("model index {index} out of range for a pool of {models} models")]
    ModelIndex { index: usize, models: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("search space of {size} genomes exceeds the limit of {limit}")]
    SpaceTooLarge { size: u64, limit: u64 },

    #[error("search space size overflows 64-bit arithmetic")]
    SpaceOverflow,

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error in {}: {msg}", path.display())]
    Csv { path: PathBuf, msg: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
