use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the library.
///
/// Variants are grouped by the CLI exit code they map to: bad input data,
/// violated preconditions, and numeric failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: malformed header: {reason}")]
    MalformedHeader { path: PathBuf, reason: String },

    #[error("{path}: bad magic {found:?}, expected {expected:?}")]
    BadMagic {
        path: PathBuf,
        found: String,
        expected: &'static str,
    },

    #[error("{path}: truncated payload: expected {expected} bytes, found {found}")]
    Truncated {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("dimension mismatch: {0}")]
    Dimensions(String),

    #[error("invalid filter bank: {0}")]
    InvalidBank(String),

    #[error("invalid template: {0}")]
    InvalidTemplate(String),

    #[error("manifest: {0}")]
    Manifest(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("region is empty")]
    EmptyRegion,

    #[error("mask has no valid pixels")]
    EmptyMask,

    #[error("histogram total is zero")]
    ZeroHistogram,

    #[error("histogram bin counts differ: {0} vs {1}")]
    BinMismatch(usize, usize),

    #[error("no shift in [-{0}, {0}] has any mask overlap")]
    NoOverlap(u32),

    #[error("strategy {0} needs templates, got histograms")]
    NeedsTemplates(&'static str),

    #[error("rank deficient corpus: {found} usable eigenvalues, {needed} needed")]
    RankDeficient { found: usize, needed: usize },

    #[error("degenerate scores: {0}")]
    DegenerateScores(String),

    #[error("mixed patch sources in one corpus: {0}")]
    MixedSources(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Exit code used by the command-line tool: 2 for usage/precondition
    /// errors, 3 for data errors, 4 for numeric failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_)
            | Error::InvalidBank(_)
            | Error::NeedsTemplates(_)
            | Error::BinMismatch(..)
            | Error::MixedSources(_) => 2,
            Error::Io { .. }
            | Error::MalformedHeader { .. }
            | Error::BadMagic { .. }
            | Error::Truncated { .. }
            | Error::Dimensions(_)
            | Error::InvalidTemplate(_)
            | Error::Manifest(_)
            | Error::EmptyRegion
            | Error::EmptyMask => 3,
            Error::ZeroHistogram
            | Error::NoOverlap(_)
            | Error::RankDeficient { .. }
            | Error::DegenerateScores(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
