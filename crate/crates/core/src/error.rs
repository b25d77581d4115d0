use std::io;

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum TlcError {
    #[error("malformed tensor header: {0}")]
    MalformedHeader(String),

    #[error("truncated payload: expected {expected} values, found {found}")]
    TruncatedPayload { expected: usize, found: usize },

    #[error("non-finite value at index {index}")]
    NonFiniteValue { index: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("group count {groups} does not divide {channels} channels")]
    InvalidGroupCount { groups: usize, channels: usize },

    #[error("window {k_h}x{k_w} contains no sample of the stride-{stride} grid")]
    EmptyWindowSample { k_h: usize, k_w: usize, stride: usize },

    #[error("window transform returned {found:?}, expected {expected:?}")]
    OpShapeViolation {
        expected: (usize, usize, usize),
        found: (usize, usize, usize),
    },

    #[error("patch {patch:?} larger than map {map:?}")]
    PatchTooLarge {
        patch: (usize, usize),
        map: (usize, usize),
    },

    #[error("layer {layer} scales to a window smaller than one pixel")]
    DegenerateScale { layer: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, TlcError>;
