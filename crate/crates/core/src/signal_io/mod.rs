//! Record ingestion, resampling, and fixed-length windowing.
//!
//! Records come in as WFDB format-212 pairs ([`read_wfdb`]) or single-column
//! CSV ([`read_csv`]), are resampled to the pipeline rate with a polyphase
//! windowed-sinc filter ([`resample`]), and split into non-overlapping
//! 10-second [`Window`]s ([`window`]).

mod csv;
mod resample;
mod wfdb;

pub use csv::read_csv;
pub use resample::{resample, resample_signal, ResampleSpec};
pub use wfdb::{read_wfdb, ChannelSelect, WfdbHeader};

use crate::{Error, Result};

/// Uniformly sampled single-lead voltage trace in millivolts.
#[derive(Debug, Clone, PartialEq)]
pub struct EcgRecord {
    pub samples: Vec<f64>,
    /// Sampling rate in Hz.
    pub fs: u32,
    pub record_id: String,
    pub patient_id: String,
    /// Lead label; the pipeline convention is lead II.
    pub lead: String,
}

impl EcgRecord {
    pub fn new(samples: Vec<f64>, fs: u32, record_id: impl Into<String>) -> Result<Self> {
        let record_id = record_id.into();
        if fs == 0 {
            return Err(Error::Precondition("fs must be positive".into()));
        }
        if samples.is_empty() {
            return Err(Error::EmptyInput(format!("record {record_id}")));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "record {record_id}, sample {i}"
            )));
        }
        Ok(Self {
            samples,
            fs,
            patient_id: record_id.clone(),
            record_id,
            lead: "II".to_string(),
        })
    }

    pub fn with_patient(mut self, patient_id: impl Into<String>) -> Self {
        self.patient_id = patient_id.into();
        self
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.fs as f64
    }
}

/// Fixed-length slice of a record: exactly `duration_s * fs` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub samples: Vec<f64>,
    /// `record_id` of the parent record.
    pub source: String,
    /// Index of the first sample within the parent record.
    pub start_sample: usize,
}

/// Split a record into consecutive non-overlapping windows of
/// `duration_s` seconds. A trailing remainder shorter than one window is
/// dropped.
pub fn window(record: &EcgRecord, duration_s: u32) -> Vec<Window> {
    let win_len = (duration_s as usize) * (record.fs as usize);
    if win_len == 0 {
        return Vec::new();
    }
    record
        .samples
        .chunks_exact(win_len)
        .enumerate()
        .map(|(i, chunk)| Window {
            samples: chunk.to_vec(),
            source: record.record_id.clone(),
            start_sample: i * win_len,
        })
        .collect()
}
