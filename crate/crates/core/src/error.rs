use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("image dimensions {height}x{width} are not multiples of {multiple}; pad the image first")]
    Padding {
        height: usize,
        width: usize,
        multiple: usize,
    },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("value {value} outside the quantizer input range [0, 1]")]
    QuantizerRange { value: f64 },
    #[error("symbol {symbol} out of range for {bits}-bit quantization")]
    SymbolRange { symbol: u32, bits: u8 },
    #[error("unsupported bit depth {0} (expected 1..=16)")]
    BitDepth(u8),
    #[error("invalid symbol distribution: {0}")]
    Distribution(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("invalid loss weights: {0}")]
    Weights(String),
    #[error("corrupt bitstream: {0}")]
    Corrupt(String),
    #[error("model mismatch: {0}")]
    ModelMismatch(String),
    #[error("training diverged at epoch {epoch}, step {step}: loss = {loss}")]
    NonFinite { epoch: usize, step: usize, loss: f64 },
    #[error("invalid RD data: {0}")]
    RdCurve(String),
    #[error("curves do not overlap in quality: reference [{ref_lo}, {ref_hi}], test [{test_lo}, {test_hi}]")]
    NoOverlap {
        ref_lo: f64,
        ref_hi: f64,
        test_lo: f64,
        test_hi: f64,
    },
    #[error("image too small: {0}")]
    TooSmall(String),
    #[error("checkpoint format: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}
