//! Crate-wide error type.

use crate::delineation::WaveType;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("unsupported WFDB signal format {0} (only single-segment format 212 is read)")]
    UnsupportedFormat(u32),
    #[error("truncated data: need {expected} bytes, got {got}")]
    Truncated { expected: usize, got: usize },
    #[error("channel {channel} out of range for record with {n_sig} signal(s)")]
    ChannelOutOfRange { channel: usize, n_sig: usize },
    #[error("signal gain is zero")]
    ZeroGain,
    #[error("parse error: {0}")]
    Parse(String),
    #[error("non-finite sample: {0}")]
    NonFinite(String),
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("bad configuration: {0}")]
    Config(String),
    #[error("vocabulary fingerprint mismatch: expected {expected}, got {got}")]
    FingerprintMismatch { expected: String, got: String },
    #[error("too few {wave_type:?} waves: have {have}, need at least {need}")]
    NotEnoughWaves {
        wave_type: WaveType,
        have: usize,
        need: usize,
    },
    #[error("need at least 2 patients for an inter-patient split, have {0}")]
    TooFewPatients(usize),
    #[error("no annotation covers the window starting at sample {0}")]
    NoAnnotation(usize),
    #[error("label/head mismatch: {0}")]
    LabelMismatch(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
