//! Adaptive-threshold QRS detection.
//!
//! The detection feature is the classic chain: 8-16 Hz band-pass ->
//! differentiate -> rectify -> 80 ms moving average. Local maxima of the
//! feature are classified QRS or noise against a threshold mixing running
//! means of the last eight QRS peaks and the last eight noise peaks, with a
//! 200 ms refractory and a search-back pass when the gap since the last QRS
//! exceeds 1.5x the running RR mean.

use super::DelineationSpec;
use crate::preprocess::butterworth::butter_bandpass;

struct RunningMean {
    values: std::collections::VecDeque<f64>,
    cap: usize,
}

impl RunningMean {
    fn new(cap: usize, seed: f64) -> Self {
        let mut values = std::collections::VecDeque::with_capacity(cap);
        values.push_back(seed);
        Self { values, cap }
    }

    fn push(&mut self, v: f64) {
        if self.values.len() == self.cap {
            self.values.pop_front();
        }
        self.values.push_back(v);
    }

    fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

/// Detection feature: band-passed, differentiated, rectified, averaged.
pub(super) fn detection_feature(signal: &[f64], fs: u32, spec: &DelineationSpec) -> Vec<f64> {
    let bp = butter_bandpass(2, spec.band_lo, spec.band_hi, fs as f64).filtfilt(signal);
    let n = bp.len();
    let mut rect = vec![0.0; n];
    for i in 1..n.saturating_sub(1) {
        rect[i] = ((bp[i + 1] - bp[i - 1]) / 2.0).abs();
    }
    moving_average(&rect, ms_to_samples(spec.ma_window_ms, fs).max(1))
}

pub(super) fn moving_average(x: &[f64], width: usize) -> Vec<f64> {
    let half = width / 2;
    let n = x.len();
    let mut prefix = vec![0.0; n + 1];
    for i in 0..n {
        prefix[i + 1] = prefix[i] + x[i];
    }
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(n);
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect()
}

pub(super) fn ms_to_samples(ms: f64, fs: u32) -> usize {
    (ms * fs as f64 / 1000.0).round() as usize
}

/// Detect R peaks; returns strictly increasing sample indices at least one
/// refractory period apart. An empty result is valid (flat input).
pub fn detect_r_peaks(signal: &[f64], fs: u32, spec: &DelineationSpec) -> Vec<usize> {
    if signal.len() < 8 {
        return Vec::new();
    }
    let feature = detection_feature(signal, fs, spec);
    let refractory = ms_to_samples(spec.refractory_ms, fs);

    // Candidate peaks: strict local maxima of the feature.
    let mut candidates: Vec<(usize, f64)> = Vec::new();
    for i in 1..feature.len() - 1 {
        if feature[i] > feature[i - 1] && feature[i] >= feature[i + 1] && feature[i] > 0.0 {
            candidates.push((i, feature[i]));
        }
    }
    if candidates.is_empty() {
        return Vec::new();
    }

    // Prime the running estimates from the first two seconds: the largest
    // feature value is taken as a QRS-sized peak, the mean as noise-sized.
    let head = feature[..(2 * fs as usize).min(feature.len())].to_vec();
    let init_signal = head.iter().cloned().fold(0.0, f64::max);
    let init_noise = head.iter().sum::<f64>() / head.len() as f64;
    let mut signal_peaks = RunningMean::new(spec.peak_history, init_signal);
    let mut noise_peaks = RunningMean::new(spec.peak_history, init_noise);
    let mut rr_mean = RunningMean::new(spec.peak_history, 60.0 / 70.0 * fs as f64);

    let threshold = |s: &RunningMean, n: &RunningMean| {
        let (sv, nv) = (s.mean(), n.mean());
        nv + spec.threshold_mix * (sv - nv)
    };

    let mut accepted: Vec<usize> = Vec::new();
    let mut last_qrs: Option<usize> = None;

    for ci in 0..candidates.len() {
        let (idx, val) = candidates[ci];
        if let Some(lq) = last_qrs {
            if idx - lq < refractory {
                continue;
            }
        }
        let th = threshold(&signal_peaks, &noise_peaks);
        if val >= th {
            if let Some(lq) = last_qrs {
                rr_mean.push((idx - lq) as f64);
            }
            signal_peaks.push(val);
            accepted.push(idx);
            last_qrs = Some(idx);
        } else {
            noise_peaks.push(val);
            // Search-back: if we have gone suspiciously long without a QRS,
            // re-examine skipped candidates against half the threshold.
            if let Some(lq) = last_qrs {
                if (idx - lq) as f64 > spec.searchback_factor * rr_mean.mean() {
                    let best = candidates[..=ci]
                        .iter()
                        .filter(|(i, _)| *i > lq + refractory && *i < idx)
                        .max_by(|a, b| a.1.total_cmp(&b.1));
                    if let Some(&(bi, bv)) = best {
                        if bv >= 0.5 * th {
                            rr_mean.push((bi - lq) as f64);
                            signal_peaks.push(bv);
                            accepted.push(bi);
                            last_qrs = Some(bi);
                        }
                    }
                }
            }
        }
    }

    // Refine each feature peak to the nearest dominant deflection of the raw
    // signal; the moving average shifts feature maxima slightly off the R.
    let refine = ms_to_samples(60.0, fs);
    let mut refined: Vec<usize> = accepted
        .iter()
        .map(|&i| {
            let lo = i.saturating_sub(refine);
            let hi = (i + refine + 1).min(signal.len());
            (lo..hi)
                .max_by(|&a, &b| signal[a].abs().total_cmp(&signal[b].abs()))
                .unwrap_or(i)
        })
        .collect();
    refined.sort_unstable();
    refined.dedup();

    // Refinement can pull two detections onto nearby samples; keep the one
    // with the larger raw amplitude whenever a pair violates the refractory.
    let mut out: Vec<usize> = Vec::with_capacity(refined.len());
    for idx in refined {
        match out.last() {
            Some(&prev) if idx - prev < refractory => {
                if signal[idx].abs() > signal[prev].abs() {
                    *out.last_mut().unwrap() = idx;
                }
            }
            _ => out.push(idx),
        }
    }
    out
}
