//! Powerline and baseline-wander removal.
//!
//! A window is cleaned in two steps, powerline first: a second-order
//! Butterworth band-stop over 50-60 Hz (both mains standards in one filter,
//! applied forward-backward for zero phase), then baseline subtraction, where
//! the baseline is the deep approximation band of a db4 wavelet
//! decomposition.

pub(crate) mod butterworth;

pub use butterworth::{butter_bandpass, butter_bandstop, Iir};

use crate::wavelet::{self, Extension};
use crate::{Error, Result, Window};
use serde::{Deserialize, Serialize};

/// How the 50/60 Hz interference is suppressed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NotchMode {
    /// One band-stop spanning `[stop_lo, stop_hi]`.
    #[default]
    BandStop,
    /// Two narrow band-stops centered on `stop_lo` and `stop_hi`.
    DualNotch,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterSpec {
    /// Butterworth prototype order.
    pub order: usize,
    /// Lower stopband edge, Hz.
    pub stop_lo: f64,
    /// Upper stopband edge, Hz.
    pub stop_hi: f64,
    pub notch_mode: NotchMode,
    /// Wavelet family used for baseline estimation; only "db4" is built.
    pub wavelet: String,
    /// Decomposition depth for the baseline band. `None` picks the smallest
    /// L with `fs / 2^(L+1) < 0.67 Hz` (L = 8 at 250 Hz), the usual bound on
    /// baseline-wander bandwidth. `Some(1)` mirrors a single-level split.
    pub dwt_levels: Option<usize>,
    /// Boundary handling for the baseline decomposition.
    pub dwt_extension: Extension,
}

impl Default for FilterSpec {
    fn default() -> Self {
        Self {
            order: 2,
            stop_lo: 50.0,
            stop_hi: 60.0,
            notch_mode: NotchMode::BandStop,
            wavelet: "db4".to_string(),
            dwt_levels: None,
            dwt_extension: Extension::Symmetric,
        }
    }
}

impl FilterSpec {
    pub fn validate(&self, fs: u32) -> Result<()> {
        if !(0.0 < self.stop_lo && self.stop_lo < self.stop_hi) {
            return Err(Error::Config(format!(
                "stopband edges must satisfy 0 < lo < hi, got [{}, {}]",
                self.stop_lo, self.stop_hi
            )));
        }
        if fs as f64 <= 2.0 * self.stop_hi {
            return Err(Error::Precondition(format!(
                "fs = {fs} Hz must exceed twice the upper stopband edge {}",
                self.stop_hi
            )));
        }
        if self.wavelet != "db4" {
            return Err(Error::Config(format!(
                "unsupported wavelet '{}' (only db4 is built)",
                self.wavelet
            )));
        }
        if self.dwt_levels == Some(0) {
            return Err(Error::Config("dwt_levels must be >= 1".into()));
        }
        Ok(())
    }

    /// Effective decomposition depth at sampling rate `fs`.
    pub fn levels_for(&self, fs: u32) -> usize {
        self.dwt_levels.unwrap_or_else(|| {
            let mut level = 1usize;
            while fs as f64 / (1u64 << (level + 1)) as f64 >= 0.67 {
                level += 1;
            }
            level
        })
    }
}

/// Suppress powerline interference; zero-phase, length preserving.
pub fn bandstop(signal: &[f64], fs: u32, spec: &FilterSpec) -> Result<Vec<f64>> {
    spec.validate(fs)?;
    match spec.notch_mode {
        NotchMode::BandStop => {
            let f = butter_bandstop(spec.order, spec.stop_lo, spec.stop_hi, fs as f64);
            Ok(f.filtfilt(signal))
        }
        NotchMode::DualNotch => {
            let half_width = 1.0;
            let lo = butter_bandstop(
                spec.order,
                spec.stop_lo - half_width,
                spec.stop_lo + half_width,
                fs as f64,
            );
            let hi = butter_bandstop(
                spec.order,
                spec.stop_hi - half_width,
                spec.stop_hi + half_width,
                fs as f64,
            );
            Ok(hi.filtfilt(&lo.filtfilt(signal)))
        }
    }
}

/// Subtract the wavelet-estimated baseline; length preserving.
pub fn remove_baseline(signal: &[f64], fs: u32, spec: &FilterSpec) -> Result<Vec<f64>> {
    spec.validate(fs)?;
    let levels = spec.levels_for(fs);
    if signal.len() < (1 << levels.min(20)) {
        return Err(Error::Precondition(format!(
            "signal of {} samples is too short for {levels} decomposition levels",
            signal.len()
        )));
    }
    let base = wavelet::baseline(signal, levels, spec.dwt_extension);
    Ok(signal.iter().zip(&base).map(|(x, b)| x - b).collect())
}

/// Full per-window cleanup: band-stop, then baseline removal.
pub fn preprocess_window(w: &Window, fs: u32, spec: &FilterSpec) -> Result<Window> {
    let stage1 = bandstop(&w.samples, fs, spec)?;
    let samples = remove_baseline(&stage1, fs, spec)?;
    Ok(Window {
        samples,
        source: w.source.clone(),
        start_sample: w.start_sample,
    })
}
