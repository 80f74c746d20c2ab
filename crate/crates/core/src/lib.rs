//! Single-lead ECG as a wave language.
//!
//! The pipeline turns a raw ECG trace into a discrete token corpus and trains
//! a compact bidirectional transformer on it:
//!
//! 1. [`signal_io`] — ingest WFDB format-212 or CSV records, resample to the
//!    pipeline rate (250 Hz), split into fixed 10-second windows.
//! 2. [`preprocess`] — Butterworth band-stop for powerline interference,
//!    wavelet baseline-wander removal.
//! 3. [`delineation`] — R-peak detection (Hamilton-style adaptive threshold)
//!    and P/QRS/T/background segmentation from wavelet detail envelopes.
//! 4. [`vocabulary`] — per-wave-type DTW k-means (12/19/14/25 clusters, 70
//!    total) mapping every wave to a token id.
//! 5. [`sentences`] — beat sentences of 1/2/6/8 consecutive heartbeats,
//!    masked-token batches for pretraining.
//! 6. [`model`] / [`autograd`] / [`training`] — U-Net CNN embeddings plus a
//!    transformer encoder with a masked-wave head and task heads, trained with
//!    a small reverse-mode tensor engine.
//! 7. [`evaluation`] — inter-patient splits, majority-vote window labels, and
//!    confusion-matrix metrics.
//! 8. [`synthgen`] — deterministic synthetic ECG with exact ground truth,
//!    used as the oracle throughout the test suite.
//!
//! The `ecglang` binary wires these into reproducible pipelines; see the
//! [`config`] module for the single JSON configuration file all stages share.

pub mod autograd;
pub mod config;
pub mod delineation;
pub mod error;
pub mod evaluation;
pub mod model;
pub mod preprocess;
pub mod signal_io;
pub mod sentences;
pub mod synthgen;
pub mod training;
pub mod vocabulary;
pub mod wavelet;

pub use config::PipelineConfig;
pub use error::{Error, Result};
pub use signal_io::{EcgRecord, Window};
