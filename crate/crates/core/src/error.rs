use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("invalid grid: {0}")]
    Grid(String),

    #[error("angle {0} deg outside [-90, 90]")]
    AngleOutOfRange(f64),

    #[error("off-grid gap {value} deg at index {index} exceeds half grid interval {half_step}")]
    GapOutOfRange {
        index: usize,
        value: f64,
        half_step: f64,
    },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid scene: {0}")]
    Scene(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("linear solve failed: {0}")]
    Solve(String),

    #[error("corrupt weight container: {0}")]
    CorruptWeights(String),

    #[error("shape mismatch for tensor `{name}`: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("weights built for M = {weights} grid points, dictionary has M = {dictionary}")]
    GridMismatch { weights: usize, dictionary: usize },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),

    #[error("corrupt dataset file: {0}")]
    CorruptDataset(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
