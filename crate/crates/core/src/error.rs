use std::path::PathBuf;

use thiserror::Error;

/// What went wrong while decoding a binary file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FormatErrorKind {
    BadMagic,
    UnsupportedVersion(u32),
    Truncated,
    NonFinite,
    InvalidUtf8,
    InvalidLabel(u8),
    InvalidFlag(u8),
    ZeroDimension,
    TrailingBytes,
}

impl std::fmt::Display for FormatErrorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::BadMagic => write!(f, "magic mismatch"),
            Self::UnsupportedVersion(v) => write!(f, "unsupported format version {v}"),
            Self::Truncated => write!(f, "truncated payload"),
            Self::NonFinite => write!(f, "non-finite value"),
            Self::InvalidUtf8 => write!(f, "invalid UTF-8 in identifier"),
            Self::InvalidLabel(b) => write!(f, "label byte {b} is not 0 or 1"),
            Self::InvalidFlag(b) => write!(f, "flag byte {b} is not 0 or 1"),
            Self::ZeroDimension => write!(f, "zero-sized dimension"),
            Self::TrailingBytes => write!(f, "unexpected trailing bytes"),
        }
    }
}

#[derive(Debug, Error)]
pub enum ClcError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("no clean samples selected for the multi-modal branch")]
    NoCleanSamples,

    #[error("{path}: {kind} at byte offset {offset}")]
    Format {
        path: PathBuf,
        offset: u64,
        kind: FormatErrorKind,
    },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("training failed at epoch {epoch}, step {step}: {source}")]
    Training {
        epoch: usize,
        step: usize,
        #[source]
        source: Box<ClcError>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl ClcError {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Self::Shape {
            op,
            detail: detail.into(),
        }
    }

    /// True for failures caused by bad input or configuration rather than
    /// by numerics or I/O at run time.
    pub fn is_usage_error(&self) -> bool {
        matches!(self, Self::Config(_) | Self::Parse { .. } | Self::Contract(_))
    }
}

pub type Result<T, E = ClcError> = std::result::Result<T, E>;
