use std::path::PathBuf;

use thiserror::Error;

use crate::score::NoteKey;

/// Errors produced anywhere in the alignment pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("score parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("empty score")]
    EmptyScore,

    #[error("unit index {index} out of range for {len} units")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("input too short: {samples} samples, need at least {needed}")]
    InputTooShort { samples: usize, needed: usize },

    #[error("silent recording")]
    SilentRecording,

    #[error("template missing: ({}, {})", .0.pitch, .0.instrument)]
    TemplateMissing(NoteKey),

    #[error("config mismatch: {0}")]
    ConfigMismatch(String),

    #[error("cannot render silence")]
    RenderSilence,

    #[error("duration too short: {0} s is less than one frame")]
    DurationTooShort(f64),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("divergence undefined: {0}")]
    DivergenceUndefined(String),

    #[error("performance shorter than score path: {frames} frames for {units} units")]
    PathTooShort { frames: usize, units: usize },

    #[error("invalid warp: {0}")]
    InvalidWarp(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the environment (files, devices) rather than of the inputs.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
