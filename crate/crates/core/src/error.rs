use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{n_transmitters} transmitters do not divide {n_receivers} receivers")]
    Divisibility {
        n_receivers: usize,
        n_transmitters: usize,
    },

    #[error("firing plan needs {requested} transmitters but the ring has {available}")]
    Capacity { requested: usize, available: usize },

    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("index out of bounds: {0}")]
    Bounds(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: String, actual: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("numerical instability: non-finite pressure at step {step}")]
    Unstable { step: usize },

    #[error("acquisition {index} failed: {source}")]
    Acquisition {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid architecture: {0}")]
    Architecture(String),

    #[error("symmetry augmentation not possible: {0}")]
    Symmetry(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: loss is {loss}")]
    Diverged { epoch: usize, batch: usize, loss: f64 },

    #[error("invalid input: {0}")]
    Input(String),

    #[error("degenerate image: every pixel is zero")]
    DegenerateImage,

    #[error("not a container file: bad magic bytes {0:?}")]
    BadMagic([u8; 4]),

    #[error("unsupported container version {0}")]
    Version(u16),

    #[error("truncated container: expected {expected} bytes, found {actual}")]
    Truncated { expected: u64, actual: u64 },

    #[error("container holds a {actual} payload, expected {expected}")]
    PayloadKind {
        expected: &'static str,
        actual: &'static str,
    },

    #[error("corrupt container: {0}")]
    Corrupt(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image codec: {0}")]
    Image(#[from] image::ImageError),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Wraps the error with the name of the pipeline stage that produced it.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    pub fn shape(expected: impl ToString, actual: impl ToString) -> Self {
        Error::Shape {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}
