//! R-peak detection and P/QRS/T/background segmentation.
//!
//! Detection is Hamilton-style adaptive thresholding ([`detect_r_peaks`]);
//! segmentation works per beat from db4 wavelet detail bands. The QRS extent
//! is read from a fine-scale (levels 2-3) modulus envelope around each R; P
//! and T waves are searched in physiologic windows on a coarse-scale (levels
//! 4-5) envelope and only emitted when their peak modulus clears a fraction
//! of that scale's window RMS. Every sample not covered by a wave becomes
//! background, so each window's segments tile `[0, len)` exactly.

mod hamilton;

pub use hamilton::detect_r_peaks;

use crate::wavelet::{self, Extension};
use serde::{Deserialize, Serialize};

/// The four wave classes a sample can belong to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum WaveType {
    P,
    QRS,
    T,
    BG,
}

impl WaveType {
    pub const ALL: [WaveType; 4] = [WaveType::P, WaveType::QRS, WaveType::T, WaveType::BG];

    pub fn label(&self) -> &'static str {
        match self {
            WaveType::P => "P",
            WaveType::QRS => "QRS",
            WaveType::T => "T",
            WaveType::BG => "BG",
        }
    }
}

impl std::str::FromStr for WaveType {
    type Err = crate::Error;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "P" => Ok(WaveType::P),
            "QRS" => Ok(WaveType::QRS),
            "T" => Ok(WaveType::T),
            "BG" => Ok(WaveType::BG),
            other => Err(crate::Error::Parse(format!("unknown wave type '{other}'"))),
        }
    }
}

/// Typed half-open sample interval `[onset, offset)` within a window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WaveSegment {
    pub wave_type: WaveType,
    pub onset: usize,
    pub offset: usize,
    /// R-peak location; present on QRS segments only.
    pub r_index: Option<usize>,
}

impl WaveSegment {
    pub fn background(onset: usize, offset: usize) -> Self {
        Self {
            wave_type: WaveType::BG,
            onset,
            offset,
            r_index: None,
        }
    }

    pub fn len(&self) -> usize {
        self.offset - self.onset
    }

    pub fn is_empty(&self) -> bool {
        self.offset <= self.onset
    }
}

/// One cardiac cycle: a contiguous run of segments containing exactly one
/// QRS. Beat spans reach from midpoint to midpoint between neighboring R
/// peaks (window edges at the ends).
#[derive(Debug, Clone)]
pub struct Heartbeat {
    pub r_index: usize,
    /// Index range into [`Delineation::segments`].
    pub segments: std::ops::Range<usize>,
}

/// Full segmentation of one window.
#[derive(Debug, Clone)]
pub struct Delineation {
    pub beats: Vec<Heartbeat>,
    /// Sorted, disjoint segments tiling `[0, window_len)`.
    pub segments: Vec<WaveSegment>,
}

impl Delineation {
    pub fn beat_segments(&self, beat: &Heartbeat) -> &[WaveSegment] {
        &self.segments[beat.segments.clone()]
    }

    /// Fraction of beats carrying all three wave types; a per-window
    /// segmentation-quality signal (1.0 = every beat fully delineated).
    pub fn quality(&self) -> f64 {
        if self.beats.is_empty() {
            return 0.0;
        }
        let complete = self
            .beats
            .iter()
            .filter(|b| {
                let segs = self.beat_segments(b);
                let has = |t| segs.iter().any(|s| s.wave_type == t);
                has(WaveType::P) && has(WaveType::QRS) && has(WaveType::T)
            })
            .count();
        complete as f64 / self.beats.len() as f64
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DelineationSpec {
    // R detection.
    pub band_lo: f64,
    pub band_hi: f64,
    pub ma_window_ms: f64,
    pub threshold_mix: f64,
    pub refractory_ms: f64,
    pub searchback_factor: f64,
    pub peak_history: usize,
    // Wave search.
    pub qrs_scales: (usize, usize),
    pub p_scales: (usize, usize),
    pub t_scales: (usize, usize),
    pub qrs_search_ms: f64,
    pub t_search_rr_fraction: f64,
    pub t_search_max_ms: f64,
    /// Dead zone after the QRS offset before the T search begins, keeping
    /// the search off the QRS tail's coarse-scale leakage.
    pub t_guard_ms: f64,
    pub p_search_lo_ms: f64,
    pub p_search_hi_ms: f64,
    pub gamma_p: f64,
    pub gamma_t: f64,
    /// Second emission gate: the amplitude-domain envelope at the apex must
    /// exceed this fraction of its own window RMS, which separates real
    /// waves from low-passed noise bumps.
    pub amplitude_gate: f64,
    /// Envelope fraction marking QRS onset/offset.
    pub boundary_fraction_qrs: f64,
    /// Envelope fraction marking P/T onset/offset.
    pub boundary_fraction_pt: f64,
    /// Moving-average smoothing applied to the modulus envelopes.
    pub envelope_smooth_ms: f64,
    /// P/T apexes closer than this to a search-window edge are rejected as
    /// leakage from the neighboring QRS.
    pub apex_margin_ms: f64,
}

impl Default for DelineationSpec {
    fn default() -> Self {
        Self {
            band_lo: 8.0,
            band_hi: 16.0,
            ma_window_ms: 80.0,
            threshold_mix: 0.45,
            refractory_ms: 200.0,
            searchback_factor: 1.5,
            peak_history: 8,
            qrs_scales: (2, 4),
            p_scales: (4, 5),
            t_scales: (4, 6),
            qrs_search_ms: 80.0,
            t_search_rr_fraction: 0.6,
            t_search_max_ms: 400.0,
            t_guard_ms: 60.0,
            p_search_lo_ms: 200.0,
            p_search_hi_ms: 40.0,
            gamma_p: 0.10,
            gamma_t: 0.10,
            amplitude_gate: 0.3,
            boundary_fraction_qrs: 0.20,
            boundary_fraction_pt: 0.25,
            envelope_smooth_ms: 24.0,
            apex_margin_ms: 28.0,
        }
    }
}

fn ms(ms: f64, fs: u32) -> usize {
    hamilton::ms_to_samples(ms, fs)
}

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64).sqrt()
}

/// Reconstruct the signal from a subset of its db4 bands: detail levels
/// `detail_lo..=detail_hi`, optionally keeping the deep approximation too.
fn band_reconstruction(
    signal: &[f64],
    detail_lo: usize,
    detail_hi: usize,
    keep_approx: bool,
) -> Vec<f64> {
    let mut dec = wavelet::wavedec(signal, detail_hi, Extension::Symmetric);
    if !keep_approx {
        dec.approx.iter_mut().for_each(|v| *v = 0.0);
    }
    for (i, d) in dec.details.iter_mut().enumerate() {
        let level = i + 1;
        if level < detail_lo || level > detail_hi {
            d.iter_mut().for_each(|v| *v = 0.0);
        }
    }
    wavelet::waverec(&dec)
}

/// Per-scale machinery reused across the beats of a window: a smoothed
/// modulus envelope of the signal reconstructed from the requested db4
/// detail bands, plus that envelope's window RMS, which gates wave emission.
struct ScaleEnvelope {
    envelope: Vec<f64>,
    gate_rms: f64,
}

impl ScaleEnvelope {
    fn build(signal: &[f64], scales: (usize, usize), smooth: usize) -> Self {
        // Band-limited version of the signal whose |.| tracks wave extent
        // without the smearing of coarse-scale coefficient supports.
        let band = band_reconstruction(signal, scales.0, scales.1, false);
        let modulus: Vec<f64> = band.iter().map(|v| v.abs()).collect();
        let envelope = hamilton::moving_average(&modulus, smooth.max(1));
        let gate_rms = rms(&envelope);
        ScaleEnvelope { envelope, gate_rms }
    }

    /// Amplitude envelope for P/T boundary refinement: `|x|` low-passed
    /// below the given detail level, measured against the isoelectric line
    /// (the window median of the low-passed signal), so a constant offset
    /// left by baseline removal cannot raise the inter-beat floor.
    fn lowpass(signal: &[f64], below_level: usize) -> Self {
        let lp = band_reconstruction(signal, below_level, below_level, true);
        let mut sorted = lp.clone();
        sorted.sort_by(f64::total_cmp);
        let floor = sorted[sorted.len() / 2];
        let envelope: Vec<f64> = lp.iter().map(|v| (v - floor).abs()).collect();
        let gate_rms = rms(&envelope);
        ScaleEnvelope { envelope, gate_rms }
    }

    fn peak_in(&self, lo: usize, hi: usize) -> Option<usize> {
        if lo >= hi {
            return None;
        }
        (lo..hi.min(self.envelope.len()))
            .max_by(|&a, &b| self.envelope[a].total_cmp(&self.envelope[b]))
    }

    /// Like [`Self::peak_in`], but rejects maxima within `margin` samples of
    /// the interval edge: those are leakage ramps from a neighboring wave
    /// (band-limiting ringing of the QRS, mostly), not an apex.
    fn interior_peak_in(&self, lo: usize, hi: usize, margin: usize) -> Option<usize> {
        let pk = self.peak_in(lo, hi)?;
        if pk < lo + margin || pk + margin >= hi {
            None
        } else {
            Some(pk)
        }
    }

    /// Expand from `peak` to where the envelope drops below `frac * peak`,
    /// clamped to `[lo, hi)`.
    fn bounds(&self, lo: usize, hi: usize, peak: usize, frac: f64) -> (usize, usize) {
        let thr = self.envelope[peak] * frac;
        let mut on = peak;
        while on > lo && self.envelope[on - 1] >= thr {
            on -= 1;
        }
        let mut off = peak + 1;
        while off < hi && self.envelope[off] >= thr {
            off += 1;
        }
        (on, off)
    }
}

/// Segment a window into heartbeats given its detected R peaks.
pub fn delineate(signal: &[f64], fs: u32, r_peaks: &[usize], spec: &DelineationSpec) -> Delineation {
    let n = signal.len();
    if r_peaks.is_empty() || n == 0 {
        let segments = if n > 0 {
            vec![WaveSegment::background(0, n)]
        } else {
            Vec::new()
        };
        return Delineation {
            beats: Vec::new(),
            segments,
        };
    }

    let smooth = ms(spec.envelope_smooth_ms, fs);
    let qrs_env = ScaleEnvelope::build(signal, spec.qrs_scales, smooth);
    let p_env = ScaleEnvelope::build(signal, spec.p_scales, smooth);
    let t_env = ScaleEnvelope::build(signal, spec.t_scales, smooth);
    // Amplitude-domain envelope (0 Hz up to the top of the P band) for
    // apex location and boundary refinement.
    let lp_env = ScaleEnvelope::lowpass(signal, spec.p_scales.0);

    let mut beats = Vec::with_capacity(r_peaks.len());
    let mut segments: Vec<WaveSegment> = Vec::new();

    for (bi, &r) in r_peaks.iter().enumerate() {
        let span_start = if bi == 0 {
            0
        } else {
            (r_peaks[bi - 1] + r) / 2
        };
        let span_end = if bi + 1 < r_peaks.len() {
            (r + r_peaks[bi + 1]) / 2
        } else {
            n
        };
        let rr_next = if bi + 1 < r_peaks.len() {
            r_peaks[bi + 1] - r
        } else if bi > 0 {
            r - r_peaks[bi - 1]
        } else {
            span_end.saturating_sub(r)
        };

        // QRS: always emitted; its extent comes from the fine-scale envelope
        // around the R peak.
        let q_lo = r.saturating_sub(ms(spec.qrs_search_ms, fs)).max(span_start);
        let q_hi = (r + ms(spec.qrs_search_ms, fs)).min(span_end).min(n);
        let (qrs_on, qrs_off) = match qrs_env.peak_in(q_lo, q_hi) {
            Some(pk) => qrs_env.bounds(q_lo, q_hi, pk, spec.boundary_fraction_qrs),
            None => (r.saturating_sub(1).max(q_lo), (r + 1).min(q_hi)),
        };

        // P: coarse-scale envelope inside [qrs_on - 200 ms, qrs_on - 40 ms).
        let p_lo = qrs_on.saturating_sub(ms(spec.p_search_lo_ms, fs)).max(span_start);
        let p_hi = qrs_on.saturating_sub(ms(spec.p_search_hi_ms, fs)).min(span_end);
        let margin = ms(spec.apex_margin_ms, fs);
        let p_wave = lp_env.interior_peak_in(p_lo, p_hi, margin).and_then(|apex| {
            let scale_ok = p_env.envelope[apex] > spec.gamma_p * p_env.gate_rms;
            let amp_ok = lp_env.envelope[apex] > spec.amplitude_gate * lp_env.gate_rms;
            if scale_ok && amp_ok {
                Some(lp_env.bounds(p_lo, p_hi, apex, spec.boundary_fraction_pt))
            } else {
                None
            }
        });

        // T: coarse-scale envelope in (qrs_off, qrs_off + min(0.6 RR, 400 ms)],
        // skipping a guard zone right after the QRS.
        let t_window = ((rr_next as f64) * spec.t_search_rr_fraction)
            .min(ms(spec.t_search_max_ms, fs) as f64) as usize;
        let t_lo = (qrs_off + ms(spec.t_guard_ms, fs)).min(n);
        let t_hi = (qrs_off + t_window).min(span_end).min(n);
        // T apexes land well inside the search window, so only a small
        // margin is needed on its edges.
        let t_wave = lp_env.interior_peak_in(t_lo, t_hi, margin.min(4)).and_then(|apex| {
            let scale_ok = t_env.envelope[apex] > spec.gamma_t * t_env.gate_rms;
            let amp_ok = lp_env.envelope[apex] > spec.amplitude_gate * lp_env.gate_rms;
            if scale_ok && amp_ok {
                Some(lp_env.bounds(t_lo, t_hi, apex, spec.boundary_fraction_pt))
            } else {
                None
            }
        });

        // Assemble this beat's waves in order, truncating any overlap at the
        // neighboring wave boundary, then fill gaps with background.
        let seg_start = segments.len();
        let mut waves: Vec<WaveSegment> = Vec::with_capacity(3);
        if let Some((on, off)) = p_wave {
            waves.push(WaveSegment {
                wave_type: WaveType::P,
                onset: on,
                offset: off.min(qrs_on),
                r_index: None,
            });
        }
        waves.push(WaveSegment {
            wave_type: WaveType::QRS,
            onset: qrs_on,
            offset: qrs_off,
            r_index: Some(r),
        });
        if let Some((on, off)) = t_wave {
            waves.push(WaveSegment {
                wave_type: WaveType::T,
                onset: on.max(qrs_off),
                offset: off,
                r_index: None,
            });
        }

        let mut cursor = span_start;
        for mut w in waves {
            w.onset = w.onset.max(cursor);
            w.offset = w.offset.min(span_end);
            if w.is_empty() {
                continue;
            }
            if w.onset > cursor {
                segments.push(WaveSegment::background(cursor, w.onset));
            }
            cursor = w.offset;
            segments.push(w);
        }
        if cursor < span_end {
            segments.push(WaveSegment::background(cursor, span_end));
        }
        beats.push(Heartbeat {
            r_index: r,
            segments: seg_start..segments.len(),
        });
    }

    debug_assert!(tiles_exactly(&segments, n), "segments must tile the window");
    Delineation { beats, segments }
}

fn tiles_exactly(segments: &[WaveSegment], n: usize) -> bool {
    let mut cursor = 0;
    for s in segments {
        if s.onset != cursor || s.offset <= s.onset {
            return false;
        }
        cursor = s.offset;
    }
    cursor == n
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::{generate, BeatMorphology, Rhythm, SynthSpec};

    const FS: u32 = 250;

    fn default_synth(seed: u64) -> SynthSpec {
        SynthSpec {
            seed,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn flat_signal_yields_no_peaks_and_one_bg_segment() {
        let spec = DelineationSpec::default();
        let zeros = vec![0.0; 2500];
        assert!(detect_r_peaks(&zeros, FS, &spec).is_empty());
        let d = delineate(&zeros, FS, &[], &spec);
        assert!(d.beats.is_empty());
        assert_eq!(d.segments, vec![WaveSegment::background(0, 2500)]);
    }

    #[test]
    fn sixty_bpm_peaks_match_ground_truth() {
        let (rec, truth) = generate(&default_synth(3));
        let spec = DelineationSpec::default();
        let peaks = detect_r_peaks(&rec.samples, FS, &spec);
        assert!(
            (peaks.len() as i64 - truth.r_peaks.len() as i64).abs() <= 1,
            "found {} peaks, truth has {}",
            peaks.len(),
            truth.r_peaks.len()
        );
        let tol = 5; // 20 ms at 250 Hz
        for p in &peaks {
            assert!(
                truth.r_peaks.iter().any(|t| p.abs_diff(*t) <= tol),
                "peak {p} has no ground-truth match"
            );
        }
    }

    #[test]
    fn one_twenty_bpm_counts_beats() {
        let spec_s = SynthSpec {
            mean_hr_bpm: 120.0,
            ..default_synth(11)
        };
        let (rec, truth) = generate(&spec_s);
        let peaks = detect_r_peaks(&rec.samples, FS, &DelineationSpec::default());
        assert!((peaks.len() as i64 - truth.r_peaks.len() as i64).abs() <= 1);
        assert!(truth.r_peaks.len() >= 19);
    }

    #[test]
    fn peaks_are_strictly_increasing_and_refractory_spaced() {
        let (rec, _) = generate(&default_synth(5));
        let spec = DelineationSpec::default();
        let peaks = detect_r_peaks(&rec.samples, FS, &spec);
        let refractory = (spec.refractory_ms * FS as f64 / 1000.0) as usize;
        for pair in peaks.windows(2) {
            assert!(pair[1] > pair[0]);
            assert!(pair[1] - pair[0] >= refractory);
        }
    }

    #[test]
    fn segments_tile_and_are_ordered() {
        let (rec, truth) = generate(&default_synth(7));
        let spec = DelineationSpec::default();
        let d = delineate(&rec.samples, FS, &truth.r_peaks, &spec);
        assert!(tiles_exactly(&d.segments, rec.samples.len()));
        for beat in &d.beats {
            let segs = d.beat_segments(beat);
            let order: Vec<WaveType> = segs
                .iter()
                .map(|s| s.wave_type)
                .filter(|t| *t != WaveType::BG)
                .collect();
            let p = order.iter().position(|t| *t == WaveType::P);
            let q = order.iter().position(|t| *t == WaveType::QRS).unwrap();
            let t = order.iter().position(|t| *t == WaveType::T);
            if let Some(p) = p {
                assert!(p < q, "P after QRS in {order:?}");
            }
            if let Some(t) = t {
                assert!(q < t, "T before QRS in {order:?}");
            }
        }
    }

    #[test]
    fn clean_beat_boundaries_match_truth_within_25_ms() {
        let synth = SynthSpec {
            noise_sd: 0.0,
            hr_jitter_fraction: 0.0,
            ..default_synth(0)
        };
        let (rec, truth) = generate(&synth);
        let spec = DelineationSpec::default();
        let d = delineate(&rec.samples, FS, &truth.r_peaks, &spec);
        let tol = 7; // 25 ms is 6.25 samples; allow the rounding sample
        for wt in [WaveType::P, WaveType::QRS, WaveType::T] {
            let truth_segs: Vec<&WaveSegment> =
                truth.segments.iter().filter(|s| s.wave_type == wt).collect();
            let found: Vec<&WaveSegment> =
                d.segments.iter().filter(|s| s.wave_type == wt).collect();
            assert_eq!(
                truth_segs.len(),
                found.len(),
                "{wt:?}: expected {} segments, found {}",
                truth_segs.len(),
                found.len()
            );
            for (t, f) in truth_segs.iter().zip(&found) {
                assert!(
                    t.onset.abs_diff(f.onset) <= tol,
                    "{wt:?} onset: truth {} vs {}",
                    t.onset,
                    f.onset
                );
                assert!(
                    t.offset.abs_diff(f.offset) <= tol,
                    "{wt:?} offset: truth {} vs {}",
                    t.offset,
                    f.offset
                );
            }
        }
    }

    #[test]
    fn zero_amplitude_p_is_not_emitted() {
        let mut bank = BeatMorphology::bank();
        bank[0].p.amplitude = 0.0;
        let synth = SynthSpec {
            morphology_bank: bank,
            noise_sd: 0.01,
            ..default_synth(2)
        };
        let (rec, truth) = generate(&synth);
        let d = delineate(&rec.samples, FS, &truth.r_peaks, &DelineationSpec::default());
        let n_p = d
            .segments
            .iter()
            .filter(|s| s.wave_type == WaveType::P)
            .count();
        assert_eq!(n_p, 0, "spurious P waves emitted");
        assert!(d.quality() < 1.0);
    }

    #[test]
    fn delineation_is_deterministic() {
        let (rec, truth) = generate(&SynthSpec {
            rhythm: Rhythm::Irregular,
            ..default_synth(9)
        });
        let spec = DelineationSpec::default();
        let a = delineate(&rec.samples, FS, &truth.r_peaks, &spec);
        let b = delineate(&rec.samples, FS, &truth.r_peaks, &spec);
        assert_eq!(a.segments, b.segments);
    }
}
