//! One-sample-per-line CSV ingestion.

use crate::{EcgRecord, Error, Result};

/// Parse a single-column CSV (LF or CRLF line endings, optional header line)
/// into a record sampled at `fs`.
pub fn read_csv(text: &str, fs: u32, record_id: impl Into<String>) -> Result<EcgRecord> {
    let mut samples = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        match line.parse::<f64>() {
            Ok(v) if v.is_finite() => samples.push(v),
            Ok(_) => {
                return Err(Error::NonFinite(format!("line {}", lineno + 1)));
            }
            Err(_) => {
                // A single leading non-numeric line is treated as a header.
                if lineno == 0 && line.chars().any(|c| c.is_ascii_alphabetic()) {
                    continue;
                }
                return Err(Error::Parse(format!(
                    "line {}: '{line}' is not a number",
                    lineno + 1
                )));
            }
        }
    }
    EcgRecord::new(samples, fs, record_id)
}
