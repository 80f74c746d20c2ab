//! Deterministic synthetic ECG with exact ground truth.
//!
//! Each beat is a sum of five Gaussian bumps (P, Q, R, S, T) placed around
//! the beat center; RR intervals are jittered uniformly, and white noise is
//! added on top. Because the waves are analytic, R locations, wave
//! boundaries, per-beat morphology ids, and rhythm labels are known exactly,
//! which is what makes this generator usable as the oracle for the
//! delineation, vocabulary, and training test suites.
//!
//! A wave's ground-truth interval is where its envelope exceeds
//! `boundary_level` (default 25%) of its peak amplitude:
//! `center ± width * sqrt(2 ln(1/level))`. The QRS interval is the union of
//! the Q, R, and S intervals.

use crate::delineation::{Delineation, Heartbeat, WaveSegment, WaveType};
use crate::signal_io::EcgRecord;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianWave {
    /// Peak amplitude, mV. Zero removes the wave entirely.
    pub amplitude: f64,
    /// Center offset from the R peak, seconds (negative = before R).
    pub center_s: f64,
    /// Gaussian sigma, seconds.
    pub width_s: f64,
}

impl GaussianWave {
    pub fn new(amplitude: f64, center_s: f64, width_s: f64) -> Self {
        Self {
            amplitude,
            center_s,
            width_s,
        }
    }
}

/// Per-beat wave parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeatMorphology {
    pub p: GaussianWave,
    pub q: GaussianWave,
    pub r: GaussianWave,
    pub s: GaussianWave,
    pub t: GaussianWave,
}

impl BeatMorphology {
    /// Textbook-ish lead-II beat.
    pub fn typical() -> Self {
        Self {
            p: GaussianWave::new(0.15, -0.20, 0.025),
            q: GaussianWave::new(-0.08, -0.040, 0.010),
            r: GaussianWave::new(1.00, 0.0, 0.014),
            s: GaussianWave::new(-0.18, 0.035, 0.011),
            t: GaussianWave::new(0.35, 0.30, 0.050),
        }
    }

    /// A small bank of distinct shapes; index selects amplitude/width/offset
    /// variations that stay DTW-separable from each other.
    pub fn bank() -> Vec<Self> {
        let base = Self::typical();
        let mut bank = vec![base];
        // Tall narrow R, small T.
        bank.push(Self {
            r: GaussianWave::new(1.45, 0.0, 0.010),
            t: GaussianWave::new(0.22, 0.27, 0.042),
            ..base
        });
        // Wide QRS with deep S, tall peaked T.
        bank.push(Self {
            q: GaussianWave::new(-0.15, -0.050, 0.014),
            r: GaussianWave::new(0.80, 0.0, 0.020),
            s: GaussianWave::new(-0.40, 0.045, 0.016),
            t: GaussianWave::new(0.55, 0.31, 0.038),
            ..base
        });
        // Inverted T, biphasic-looking P.
        bank.push(Self {
            p: GaussianWave::new(0.11, -0.21, 0.032),
            t: GaussianWave::new(-0.30, 0.29, 0.055),
            ..base
        });
        // Low-voltage beat.
        bank.push(Self {
            p: GaussianWave::new(0.08, -0.19, 0.022),
            q: GaussianWave::new(-0.04, -0.038, 0.009),
            r: GaussianWave::new(0.55, 0.0, 0.016),
            s: GaussianWave::new(-0.10, 0.034, 0.010),
            t: GaussianWave::new(0.18, 0.28, 0.046),
        });
        // Prominent P, slurred wide T.
        bank.push(Self {
            p: GaussianWave::new(0.22, -0.22, 0.030),
            t: GaussianWave::new(0.40, 0.33, 0.065),
            ..base
        });
        bank
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rhythm {
    Regular,
    Irregular,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthSpec {
    pub fs: u32,
    pub duration_s: f64,
    pub mean_hr_bpm: f64,
    /// Uniform RR jitter fraction for regular rhythm; irregular rhythm uses
    /// at least 0.25 regardless.
    pub hr_jitter_fraction: f64,
    pub morphology_bank: Vec<BeatMorphology>,
    /// Morphology used for every beat of this record.
    pub morphology_id: usize,
    /// White-noise standard deviation, mV.
    pub noise_sd: f64,
    pub rhythm: Rhythm,
    /// Amplitude fraction defining ground-truth wave boundaries.
    pub boundary_level: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            fs: 250,
            duration_s: 10.0,
            mean_hr_bpm: 60.0,
            hr_jitter_fraction: 0.03,
            morphology_bank: BeatMorphology::bank(),
            morphology_id: 0,
            noise_sd: 0.02,
            rhythm: Rhythm::Regular,
            boundary_level: 0.25,
            seed: 0,
        }
    }
}

/// Everything the generator knows about what it emitted.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    /// Exact R-peak sample indices.
    pub r_peaks: Vec<usize>,
    /// Exact segmentation tiling `[0, len)`.
    pub segments: Vec<WaveSegment>,
    /// Morphology id per beat.
    pub beat_morphologies: Vec<usize>,
    pub rhythm: Rhythm,
    /// RR intervals in seconds (`r_peaks.len() - 1` entries).
    pub rr_intervals: Vec<f64>,
}

fn truth_radius(w: &GaussianWave, level: f64) -> f64 {
    w.width_s * (2.0 * (1.0 / level).ln()).sqrt()
}

/// Generate one record plus its exact ground truth.
pub fn generate(spec: &SynthSpec) -> (EcgRecord, GroundTruth) {
    assert!(spec.fs > 0 && spec.duration_s > 0.0);
    assert!(
        spec.morphology_id < spec.morphology_bank.len(),
        "morphology_id {} outside bank of {}",
        spec.morphology_id,
        spec.morphology_bank.len()
    );
    assert!(spec.boundary_level > 0.0 && spec.boundary_level < 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let fs = spec.fs as f64;
    let n = (spec.duration_s * fs).round() as usize;

    let jitter = match spec.rhythm {
        Rhythm::Regular => spec.hr_jitter_fraction,
        Rhythm::Irregular => spec.hr_jitter_fraction.max(0.25),
    };
    let mean_rr = 60.0 / spec.mean_hr_bpm;

    // Beat centers, keeping full beats inside the record.
    let lead_in = 0.45;
    let tail = 0.45;
    let mut centers = Vec::new();
    let mut t = lead_in;
    while t < spec.duration_s - tail {
        centers.push(t);
        let u: f64 = rng.gen_range(-1.0..=1.0);
        t += mean_rr * (1.0 + jitter * u);
    }

    let morph = spec.morphology_bank[spec.morphology_id];
    let mut samples = vec![0.0f64; n];
    let mut truth_waves: Vec<(WaveType, f64, f64, Option<usize>)> = Vec::new();
    let mut r_peaks = Vec::with_capacity(centers.len());

    for (bi, &c) in centers.iter().enumerate() {
        // Compress P/T toward the QRS when the neighboring gap is short, the
        // way real intervals shorten at higher heart rates.
        let rr_prev = if bi > 0 { c - centers[bi - 1] } else { mean_rr };
        let rr_next = if bi + 1 < centers.len() {
            centers[bi + 1] - c
        } else {
            mean_rr
        };
        let scale_p = (rr_prev / 1.0).clamp(0.72, 1.0);
        let scale_t = (rr_next / 1.0).clamp(0.72, 1.0);

        let place = |w: &GaussianWave, scale: f64| GaussianWave {
            amplitude: w.amplitude,
            center_s: c + w.center_s * scale,
            width_s: w.width_s,
        };
        let p = place(&morph.p, scale_p);
        let q = place(&morph.q, 1.0);
        let r = place(&morph.r, 1.0);
        let s = place(&morph.s, 1.0);
        let t_w = place(&morph.t, scale_t);

        for w in [&p, &q, &r, &s, &t_w] {
            add_gaussian(&mut samples, fs, w);
        }
        r_peaks.push((c * fs).round() as usize);

        let lvl = spec.boundary_level;
        if p.amplitude != 0.0 {
            let rad = truth_radius(&p, lvl);
            truth_waves.push((WaveType::P, p.center_s - rad, p.center_s + rad, None));
        }
        let qrs_members: Vec<&GaussianWave> =
            [&q, &r, &s].into_iter().filter(|w| w.amplitude != 0.0).collect();
        if !qrs_members.is_empty() {
            let on = qrs_members
                .iter()
                .map(|w| w.center_s - truth_radius(w, lvl))
                .fold(f64::INFINITY, f64::min);
            let off = qrs_members
                .iter()
                .map(|w| w.center_s + truth_radius(w, lvl))
                .fold(f64::NEG_INFINITY, f64::max);
            truth_waves.push((WaveType::QRS, on, off, Some((c * fs).round() as usize)));
        }
        if t_w.amplitude != 0.0 {
            let rad = truth_radius(&t_w, lvl);
            truth_waves.push((WaveType::T, t_w.center_s - rad, t_w.center_s + rad, None));
        }
    }

    if spec.noise_sd > 0.0 {
        for v in &mut samples {
            *v += spec.noise_sd * standard_normal(&mut rng);
        }
    }

    // Convert wave times to a non-overlapping sample tiling with BG filler.
    let mut segments = Vec::new();
    let mut cursor = 0usize;
    truth_waves.sort_by(|a, b| a.1.total_cmp(&b.1));
    for (wt, on_s, off_s, r_idx) in truth_waves {
        let mut on = ((on_s * fs).round() as isize).clamp(0, n as isize) as usize;
        let off = ((off_s * fs).round() as isize).clamp(0, n as isize) as usize;
        on = on.max(cursor); // truncate accidental overlaps
        if off <= on {
            continue;
        }
        if on > cursor {
            segments.push(WaveSegment::background(cursor, on));
        }
        segments.push(WaveSegment {
            wave_type: wt,
            onset: on,
            offset: off,
            r_index: r_idx,
        });
        cursor = off;
    }
    if cursor < n {
        segments.push(WaveSegment::background(cursor, n));
    }

    let rr_intervals = centers.windows(2).map(|w| w[1] - w[0]).collect();
    let record = EcgRecord::new(samples, spec.fs, format!("synth-{}", spec.seed))
        .expect("generator emits finite samples");
    (
        record,
        GroundTruth {
            r_peaks,
            segments,
            beat_morphologies: vec![spec.morphology_id; centers.len()],
            rhythm: spec.rhythm,
            rr_intervals,
        },
    )
}

/// View ground-truth segments as a [`Delineation`]: beats span midpoint to
/// midpoint between R peaks, and background segments crossing a beat
/// boundary are split so every beat owns a contiguous tiling.
pub fn truth_delineation(truth: &GroundTruth, window_len: usize) -> Delineation {
    let rs = &truth.r_peaks;
    if rs.is_empty() {
        return Delineation {
            beats: Vec::new(),
            segments: vec![WaveSegment::background(0, window_len)],
        };
    }
    let mut beats = Vec::with_capacity(rs.len());
    let mut segments = Vec::new();
    for (bi, &r) in rs.iter().enumerate() {
        let span_start = if bi == 0 { 0 } else { (rs[bi - 1] + r) / 2 };
        let span_end = if bi + 1 < rs.len() {
            (r + rs[bi + 1]) / 2
        } else {
            window_len
        };
        let seg_start = segments.len();
        for seg in &truth.segments {
            let onset = seg.onset.max(span_start);
            let offset = seg.offset.min(span_end);
            if onset < offset {
                segments.push(WaveSegment {
                    wave_type: seg.wave_type,
                    onset,
                    offset,
                    r_index: seg.r_index,
                });
            }
        }
        beats.push(Heartbeat {
            r_index: r,
            segments: seg_start..segments.len(),
        });
    }
    Delineation { beats, segments }
}

fn add_gaussian(samples: &mut [f64], fs: f64, w: &GaussianWave) {
    if w.amplitude == 0.0 {
        return;
    }
    let lo = (((w.center_s - 5.0 * w.width_s) * fs).floor() as isize).max(0) as usize;
    let hi = ((((w.center_s + 5.0 * w.width_s) * fs).ceil() as isize).max(0) as usize)
        .min(samples.len());
    for (i, v) in samples.iter_mut().enumerate().take(hi).skip(lo) {
        let dt = i as f64 / fs - w.center_s;
        *v += w.amplitude * (-dt * dt / (2.0 * w.width_s * w.width_s)).exp();
    }
}

/// Box-Muller; two uniforms per draw keeps the stream layout obvious.
fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// One labeled window of a synthetic corpus.
#[derive(Debug, Clone)]
pub struct CorpusWindow {
    pub samples: Vec<f64>,
    pub patient_id: String,
    pub record_id: String,
    pub truth: GroundTruth,
    pub morphology_id: usize,
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub fs: u32,
    pub windows: Vec<CorpusWindow>,
}

/// Options for [`generate_corpus`].
#[derive(Debug, Clone)]
pub struct CorpusSpec {
    pub n_patients: usize,
    pub windows_per_patient: usize,
    pub template: SynthSpec,
    /// Fraction of windows per patient generated with irregular rhythm
    /// (rounded down; the rest are regular).
    pub irregular_fraction: f64,
    /// Assign each patient its own morphology id (cycling through the bank).
    pub per_patient_morphology: bool,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            n_patients: 4,
            windows_per_patient: 10,
            template: SynthSpec::default(),
            irregular_fraction: 0.0,
            per_patient_morphology: true,
            seed: 0,
        }
    }
}

/// Deterministic multi-patient corpus; every window is `duration_s` long and
/// carries its own ground truth.
pub fn generate_corpus(spec: &CorpusSpec) -> Corpus {
    let mut windows = Vec::with_capacity(spec.n_patients * spec.windows_per_patient);
    let bank_len = spec.template.morphology_bank.len();
    let n_irregular = (spec.windows_per_patient as f64 * spec.irregular_fraction).floor() as usize;
    for p in 0..spec.n_patients {
        let patient_id = format!("p{p:03}");
        let morphology_id = if spec.per_patient_morphology {
            p % bank_len
        } else {
            spec.template.morphology_id
        };
        for w in 0..spec.windows_per_patient {
            let rhythm = if w < n_irregular {
                Rhythm::Irregular
            } else {
                spec.template.rhythm
            };
            let win_spec = SynthSpec {
                morphology_id,
                rhythm,
                // Distinct, reproducible stream per (corpus, patient, window).
                seed: spec
                    .seed
                    .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                    .wrapping_add((p as u64) << 20)
                    .wrapping_add(w as u64),
                ..spec.template.clone()
            };
            let (rec, truth) = generate(&win_spec);
            windows.push(CorpusWindow {
                samples: rec.samples,
                patient_id: patient_id.clone(),
                record_id: format!("{patient_id}-w{w:03}"),
                truth,
                morphology_id,
            });
        }
    }
    Corpus {
        fs: spec.template.fs,
        windows,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_is_bitwise_identical() {
        let spec = SynthSpec::default();
        let (a, ta) = generate(&spec);
        let (b, tb) = generate(&spec);
        assert_eq!(a.samples, b.samples);
        assert_eq!(ta.r_peaks, tb.r_peaks);
    }

    #[test]
    fn sixty_bpm_regular_places_ten_beats() {
        let spec = SynthSpec {
            hr_jitter_fraction: 0.0,
            noise_sd: 0.0,
            ..SynthSpec::default()
        };
        let (_, truth) = generate(&spec);
        assert_eq!(truth.r_peaks.len(), 10);
    }

    #[test]
    fn zero_amplitude_p_emits_no_p_segments() {
        let mut bank = BeatMorphology::bank();
        bank[0].p.amplitude = 0.0;
        let spec = SynthSpec {
            morphology_bank: bank,
            noise_sd: 0.0,
            ..SynthSpec::default()
        };
        let (_, truth) = generate(&spec);
        assert!(truth
            .segments
            .iter()
            .all(|s| s.wave_type != WaveType::P));
        assert!(truth
            .segments
            .iter()
            .any(|s| s.wave_type == WaveType::QRS));
    }

    #[test]
    fn truth_segments_tile_the_window() {
        for seed in 0..5 {
            let spec = SynthSpec {
                seed,
                rhythm: if seed % 2 == 0 { Rhythm::Regular } else { Rhythm::Irregular },
                mean_hr_bpm: 72.0,
                ..SynthSpec::default()
            };
            let (rec, truth) = generate(&spec);
            let mut cursor = 0;
            for seg in &truth.segments {
                assert_eq!(seg.onset, cursor, "gap/overlap at segment {seg:?}");
                assert!(seg.offset > seg.onset);
                cursor = seg.offset;
            }
            assert_eq!(cursor, rec.samples.len());
        }
    }

    #[test]
    fn beat_wave_order_is_p_qrs_t() {
        let (_, truth) = generate(&SynthSpec::default());
        let waves: Vec<WaveType> = truth
            .segments
            .iter()
            .filter(|s| s.wave_type != WaveType::BG)
            .map(|s| s.wave_type)
            .collect();
        for chunk in waves.chunks(3) {
            if chunk.len() == 3 {
                assert_eq!(chunk, [WaveType::P, WaveType::QRS, WaveType::T]);
            }
        }
    }

    #[test]
    fn corpus_has_expected_shape() {
        let corpus = generate_corpus(&CorpusSpec {
            n_patients: 4,
            windows_per_patient: 50,
            ..CorpusSpec::default()
        });
        assert_eq!(corpus.windows.len(), 200);
        let patients: std::collections::HashSet<_> =
            corpus.windows.iter().map(|w| w.patient_id.clone()).collect();
        assert_eq!(patients.len(), 4);
        assert!(corpus.windows.iter().all(|w| w.samples.len() == 2500));
    }

    #[test]
    fn rhythm_classes_are_separable_by_rr_variance() {
        // Oracle classifier: threshold on ground-truth RR standard deviation.
        let corpus = generate_corpus(&CorpusSpec {
            n_patients: 4,
            windows_per_patient: 30,
            irregular_fraction: 0.5,
            ..CorpusSpec::default()
        });
        let sd = |rr: &[f64]| {
            let m = rr.iter().sum::<f64>() / rr.len() as f64;
            (rr.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / rr.len() as f64).sqrt()
        };
        let mut correct = 0;
        let mut total = 0;
        for w in &corpus.windows {
            if w.truth.rr_intervals.len() < 2 {
                continue;
            }
            let predicted = if sd(&w.truth.rr_intervals) > 0.08 {
                Rhythm::Irregular
            } else {
                Rhythm::Regular
            };
            total += 1;
            if predicted == w.truth.rhythm {
                correct += 1;
            }
        }
        let acc = correct as f64 / total as f64;
        assert!(acc >= 0.99, "oracle accuracy {acc}");
    }
}
