//! Crate-wide error type.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: unsupported bit depth (expected 16-bit, maxval 65535)")]
    UnsupportedBitDepth { path: PathBuf },

    #[error("{path}: unsupported raster format: {detail}")]
    UnsupportedFormat { path: PathBuf, detail: String },

    #[error("{path}: truncated payload at byte offset {offset} (expected {expected} bytes)")]
    Truncated {
        path: PathBuf,
        offset: usize,
        expected: usize,
    },

    #[error("image too small: {width}x{height} (minimum 64x64)")]
    ImageTooSmall { width: usize, height: usize },

    #[error("shape mismatch: {left_w}x{left_h} vs {right_w}x{right_h}")]
    ShapeMismatch {
        left_w: usize,
        left_h: usize,
        right_w: usize,
        right_h: usize,
    },

    #[error("illegal mask pixel value {value} (expected 0, 128, or 255)")]
    IllegalMaskValue { value: u16 },

    #[error("no foreground found")]
    NoForeground,

    #[error("empty breast mask")]
    EmptyBreast,

    #[error("superpixel count {k} exceeds breast area {area}")]
    SuperpixelCountTooLarge { k: usize, area: usize },

    #[error("{0}")]
    InvalidInput(String),

    #[error("empty gold-standard list")]
    EmptyGold,

    #[error("gold record references unknown image id {0:?}")]
    UnknownImageId(String),

    #[error("labels contain a single class only")]
    SingleClass,

    #[error("SMO did not converge within {iterations} iterations (KKT residual {residual:.3e})")]
    SmoNonConvergence { iterations: usize, residual: f64 },

    #[error("feature name mismatch: {0}")]
    FeatureMismatch(String),

    #[error("{path}: bad magic bytes (not a model file)")]
    BadMagic { path: PathBuf },

    #[error("{path}: model format version {found} unsupported (expected {expected})")]
    VersionMismatch {
        path: PathBuf,
        found: u32,
        expected: u32,
    },

    #[error("{path}: checksum failure (file corrupt or truncated)")]
    ChecksumFailure { path: PathBuf },

    #[error("bank version mismatch: model {model:?}, features {features:?}")]
    BankVersionMismatch { model: String, features: String },

    #[error("perfect separation detected; coefficients diverge")]
    Separation,

    #[error("singular information matrix")]
    SingularInformation,

    #[error("constant vector: statistic undefined")]
    ConstantVector,

    #[error("transform domain violation for subject {subject}: {detail}")]
    TransformDomain { subject: String, detail: String },

    #[error("{0}")]
    Config(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
