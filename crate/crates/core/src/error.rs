use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: input has {input_channels} channels (shape {input:?}) but kernel expects {kernel_in} (kernel shape {kernel:?})")]
    ChannelMismatch {
        op: &'static str,
        input: [usize; 4],
        kernel: [usize; 4],
        input_channels: usize,
        kernel_in: usize,
    },

    #[error("{op}: shape mismatch, expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        op: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    #[error("{op}: data length {len} does not match shape {shape:?}")]
    DataLength {
        op: &'static str,
        shape: [usize; 4],
        len: usize,
    },

    #[error("dilation must be positive, got {0}")]
    InvalidDilation(usize),

    #[error("{op}: invalid kernel geometry: {reason}")]
    KernelGeometry { op: &'static str, reason: String },

    #[error("max_pool_2x2: spatial size {h}x{w} is odd; pad the input to even size first")]
    OddSpatial { h: usize, w: usize },

    #[error("bilinear_upsample: unsupported factor {0} (expected 1, 2, 4 or 8)")]
    UnsupportedFactor(usize),

    #[error("concat_channels: part {index} has shape {got:?}, incompatible with {expected:?}")]
    ConcatMismatch {
        index: usize,
        expected: [usize; 4],
        got: [usize; 4],
    },

    #[error("concat_channels: no parts given")]
    EmptyConcat,

    #[error("input spatial size {h}x{w} is not divisible by {multiple}; use dataio::pad_to_multiple first")]
    NotDivisible { h: usize, w: usize, multiple: usize },

    #[error("tape already replayed; call reset() before another backward pass")]
    TapeReplayed,

    #[error("backward: loss node must hold a single scalar, got shape {0:?}")]
    NonScalarLoss([usize; 4]),

    #[error("target contains value {value} at index {index}; expected 0 or 1")]
    InvalidTarget { index: usize, value: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("{0}")]
    Batch(String),

    #[error("no ground-truth mask for image '{stem}'")]
    MissingMask { stem: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("not a UHDN checkpoint")]
    BadMagic,

    #[error("unsupported checkpoint version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("checkpoint truncated while reading {what}")]
    Truncated { what: &'static str },

    #[error("{}", describe_param_mismatch(.missing, .unexpected, .wrong_shape))]
    ParamMismatch {
        missing: Vec<String>,
        unexpected: Vec<String>,
        wrong_shape: Vec<String>,
    },

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),
}

fn describe_param_mismatch(missing: &[String], unexpected: &[String], wrong_shape: &[String]) -> String {
    let mut parts = vec!["parameter set does not match configuration".to_string()];
    if !missing.is_empty() {
        parts.push(format!("missing: {}", missing.join(", ")));
    }
    if !unexpected.is_empty() {
        parts.push(format!("unexpected: {}", unexpected.join(", ")));
    }
    if !wrong_shape.is_empty() {
        parts.push(format!("wrong shape: {}", wrong_shape.join(", ")));
    }
    parts.join("; ")
}

/// Process exit codes used by the command-line tool.
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_MISMATCH: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

impl Error {
    /// 2 for bad input or usage, 3 for data/checkpoint mismatches, 4 for
    /// numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::EmptyDataset
            | Error::MissingMask { .. }
            | Error::Io { .. }
            | Error::Image { .. }
            | Error::Format { .. }
            | Error::InvalidTarget { .. }
            | Error::UnsupportedFactor(_)
            | Error::InvalidDilation(_) => EXIT_USAGE,
            Error::NonFinite(_) | Error::TapeReplayed | Error::NonScalarLoss(_) => EXIT_NUMERICAL,
            _ => EXIT_MISMATCH,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
