use std::path::PathBuf;

use thiserror::Error;

/// Which raster a validation failure refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Field {
    Mask,
    Depth,
    Score,
}

impl std::fmt::Display for Field {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Field::Mask => "mask",
            Field::Depth => "depth",
            Field::Score => "score",
        })
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{field} dimensions {found:?} do not match expected {expected:?}")]
    DimensionMismatch {
        field: Field,
        expected: (u32, u32),
        found: (u32, u32),
    },
    #[error("{field} buffer has {found} values, expected {expected}")]
    BufferLength {
        field: Field,
        expected: usize,
        found: usize,
    },
    #[error("non-finite {field} value at pixel {index}")]
    NonFinite { field: Field, index: usize },
    #[error("non-binary label {value} at pixel {index}")]
    NonBinaryLabel { index: usize, value: u8 },
    #[error("non-positive depth {value} at pixel {index}")]
    NonPositiveDepth { index: usize, value: f32 },
    #[error("invalid pose: {0}")]
    InvalidPose(String),
    #[error("invalid camera model: {0}")]
    InvalidCamera(String),
    #[error("invalid latency profile: {0}")]
    InvalidLatency(String),
    #[error("invalid scene: {0}")]
    InvalidScene(String),

    #[error("{scores} score maps for {frames} ground-truth frames")]
    LengthMismatch { scores: usize, frames: usize },
    #[error("empty sequence")]
    EmptySequence,
    #[error("no frame has its latency-shifted target inside the sequence")]
    NothingToEvaluate,
    #[error("latency of {delta} frames needs at least {needed} frames, sequence has {frames}")]
    LatencyExceedsSequence {
        delta: usize,
        needed: usize,
        frames: usize,
    },
    #[error("frame {frame} has no {channel} channel")]
    MissingGeometry { frame: u32, channel: &'static str },
    #[error("sequence has {frames} frames, consistency needs more than {needed}")]
    SequenceTooShort { frames: usize, needed: usize },

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },
    #[error("truncated raster: expected {expected} payload bytes, got {found}")]
    Truncated { expected: usize, found: usize },
    #[error("raster dimensions {width}x{height} overflow")]
    DimensionOverflow { width: u32, height: u32 },
    #[error("trailing bytes after raster payload in {0}")]
    TrailingBytes(PathBuf),
    #[error("malformed pose line {line}: {reason}")]
    MalformedPose { line: usize, reason: String },
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("frame {index}: missing {channel} file {path}")]
    MissingFile {
        index: u32,
        channel: String,
        path: PathBuf,
    },
    #[error("missing score map for frame {0}")]
    MissingScore(u32),
    #[error("missing timing row for frame {0}")]
    MissingTiming(u32),

    #[error("method exited with {status} after {completed} frames")]
    MethodCrashed { status: String, completed: usize },
    #[error("protocol desync at frame {frame}: {reason}")]
    ProtocolDesync { frame: u32, reason: String },
    #[error("frame {frame} timed out after {timeout_ms} ms")]
    Timeout { frame: u32, timeout_ms: u64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// Stable machine-readable name of the error category.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DimensionMismatch { .. }
            | Error::BufferLength { .. }
            | Error::NonFinite { .. }
            | Error::NonBinaryLabel { .. }
            | Error::NonPositiveDepth { .. }
            | Error::InvalidPose(_)
            | Error::InvalidCamera(_)
            | Error::InvalidLatency(_)
            | Error::InvalidScene(_)
            | Error::LengthMismatch { .. }
            | Error::EmptySequence => "invalid_input",
            Error::NothingToEvaluate
            | Error::LatencyExceedsSequence { .. }
            | Error::SequenceTooShort { .. } => "insufficient_frames",
            Error::MissingGeometry { .. } => "missing_geometry",
            Error::BadMagic { .. }
            | Error::Truncated { .. }
            | Error::DimensionOverflow { .. }
            | Error::TrailingBytes(_)
            | Error::MalformedPose { .. }
            | Error::Manifest(_)
            | Error::Json(_)
            | Error::Csv(_) => "format",
            Error::MissingFile { .. } | Error::MissingScore(_) | Error::MissingTiming(_) => {
                "missing_data"
            }
            Error::MethodCrashed { .. } => "method_crashed",
            Error::ProtocolDesync { .. } => "protocol_desync",
            Error::Timeout { .. } => "timeout",
            Error::Io(_) => "io",
        }
    }
}
