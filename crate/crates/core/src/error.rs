use thiserror::Error;

/// Errors surfaced by the public API.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimensions: {rows}x{cols}")]
    InvalidDims { rows: usize, cols: usize },

    #[error("shape mismatch: {left} vs {right} in {op}")]
    ShapeMismatch {
        op: &'static str,
        left: String,
        right: String,
    },

    #[error("element at index {index} is {value}, expected -1 or +1")]
    NonBinaryValue { index: usize, value: f64 },

    #[error("invalid quantization spec: {0}")]
    InvalidQuantSpec(String),

    #[error("batch of size {0} is too small for batch normalization in training mode")]
    BatchTooSmall(usize),

    #[error("non-finite loss encountered at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },

    #[error("bad IDX magic: got {got:#010x}, expected {expected:#010x}")]
    IdxMagic { got: u32, expected: u32 },

    #[error("truncated file: needed {needed} bytes, got {got}")]
    Truncated { needed: usize, got: usize },

    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },

    #[error("bad checkpoint magic")]
    CheckpointMagic,

    #[error("unsupported checkpoint version {0}")]
    CheckpointVersion(u32),

    #[error("checkpoint dimension {0} exceeds the supported limit")]
    CheckpointDimOverflow(u64),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
