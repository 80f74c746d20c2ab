//! Polyphase windowed-sinc resampling.
//!
//! The rate change `fs -> target_fs` is reduced to `up/down` in lowest terms.
//! Every output sample is an inner product of the input with a Kaiser-windowed
//! sinc kernel centered on its (fractional) source position; the kernel is
//! low-passed at the Nyquist rate of the slower side, which is both the
//! anti-alias and the anti-image filter. Kernels repeat with period `up`, so
//! they are precomputed once per phase.

use crate::{EcgRecord, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResampleSpec {
    /// Kernel taps evaluated per output sample.
    pub taps_per_phase: usize,
    pub kaiser_beta: f64,
}

impl Default for ResampleSpec {
    fn default() -> Self {
        Self {
            taps_per_phase: 64,
            kaiser_beta: 8.0,
        }
    }
}

/// Resample a record to `target_fs`. Identity (bitwise) when the rates match.
pub fn resample(record: &EcgRecord, target_fs: u32, spec: ResampleSpec) -> Result<EcgRecord> {
    if target_fs == 0 {
        return Err(Error::Precondition("target_fs must be positive".into()));
    }
    if target_fs == record.fs {
        return Ok(record.clone());
    }
    let samples = resample_signal(&record.samples, record.fs, target_fs, spec);
    Ok(EcgRecord {
        samples,
        fs: target_fs,
        record_id: record.record_id.clone(),
        patient_id: record.patient_id.clone(),
        lead: record.lead.clone(),
    })
}

/// Resample a raw signal; output length is `round(len * target_fs / fs)`.
pub fn resample_signal(x: &[f64], fs: u32, target_fs: u32, spec: ResampleSpec) -> Vec<f64> {
    assert!(fs > 0 && target_fs > 0, "sampling rates must be positive");
    if fs == target_fs {
        return x.to_vec();
    }
    let g = gcd(fs, target_fs);
    let up = (target_fs / g) as usize;
    let down = (fs / g) as usize;

    let out_len = ((x.len() as u64 * target_fs as u64) as f64 / fs as f64).round() as usize;
    let half = (spec.taps_per_phase / 2).max(1);
    // Cutoff in cycles per *input* sample: Nyquist of the slower rate.
    let fc = 0.5 * (up as f64 / down as f64).min(1.0);

    // Kernel for phase r covers input offsets m in [-half, half); the source
    // position of output n is p = n*down/up = floor(p) + r/up with
    // r = (n*down) mod up.
    let mut kernels = Vec::with_capacity(up);
    for r in 0..up {
        let frac = r as f64 / up as f64;
        let mut k = Vec::with_capacity(2 * half);
        let mut sum = 0.0;
        for m in -(half as isize)..(half as isize) {
            let u = frac - m as f64; // p - (floor(p) + m)
            let v = u / half as f64;
            let w = if v.abs() <= 1.0 {
                bessel_i0(spec.kaiser_beta * (1.0 - v * v).sqrt()) / bessel_i0(spec.kaiser_beta)
            } else {
                0.0
            };
            let val = 2.0 * fc * sinc(2.0 * fc * u) * w;
            sum += val;
            k.push(val);
        }
        // Per-phase normalization: exact DC gain, removes interpolation ripple.
        for val in &mut k {
            *val /= sum;
        }
        kernels.push(k);
    }

    let mut out = Vec::with_capacity(out_len);
    for n in 0..out_len {
        let num = n * down;
        let base = (num / up) as isize;
        let kernel = &kernels[num % up];
        let mut acc = 0.0;
        for (i, m) in (-(half as isize)..(half as isize)).enumerate() {
            let idx = base + m;
            if idx >= 0 && (idx as usize) < x.len() {
                acc += x[idx as usize] * kernel[i];
            }
        }
        out.push(acc);
    }
    out
}

fn sinc(t: f64) -> f64 {
    if t == 0.0 {
        1.0
    } else {
        let pt = std::f64::consts::PI * t;
        pt.sin() / pt
    }
}

/// Modified Bessel function of the first kind, order zero (power series).
fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let half_x = x / 2.0;
    for k in 1..64 {
        term *= (half_x / k as f64) * (half_x / k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn gcd(a: u32, b: u32) -> u32 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(f: f64, fs: u32, n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * f * i as f64 / fs as f64).sin())
            .collect()
    }

    #[test]
    fn identity_when_rates_match() {
        let rec = EcgRecord::new(sine(5.0, 250, 1000), 250, "r").unwrap();
        let out = resample(&rec, 250, ResampleSpec::default()).unwrap();
        assert_eq!(out.samples, rec.samples);
    }

    #[test]
    fn halving_the_rate_halves_the_length() {
        let y = resample_signal(&sine(5.0, 500, 5000), 500, 250, ResampleSpec::default());
        assert_eq!(y.len(), 2500);
    }

    #[test]
    fn output_length_is_rounded_ratio() {
        let y = resample_signal(&vec![0.0; 1001], 360, 250, ResampleSpec::default());
        assert_eq!(y.len(), (1001.0f64 * 250.0 / 360.0).round() as usize);
    }

    #[test]
    fn sine_matches_analytic_after_downsampling() {
        // Oracle: closed-form evaluation of the same 5 Hz sine at 250 Hz.
        let y = resample_signal(&sine(5.0, 500, 5000), 500, 250, ResampleSpec::default());
        let truth = sine(5.0, 250, 2500);
        let err = y
            .iter()
            .zip(&truth)
            .skip(50)
            .take(y.len() - 100)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-3, "max interior error {err}");
    }

    #[test]
    fn upsampling_matches_analytic() {
        let y = resample_signal(&sine(5.0, 125, 1250), 125, 250, ResampleSpec::default());
        assert_eq!(y.len(), 2500);
        let truth = sine(5.0, 250, 2500);
        let err = y
            .iter()
            .zip(&truth)
            .skip(100)
            .take(y.len() - 200)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-3, "max interior error {err}");
    }

    #[test]
    fn resampling_is_linear_in_the_input() {
        let x = sine(7.0, 500, 2000);
        let spec = ResampleSpec::default();
        let a = 3.25;
        let scaled: Vec<f64> = x.iter().map(|v| a * v).collect();
        let y1 = resample_signal(&scaled, 500, 250, spec);
        let y2 = resample_signal(&x, 500, 250, spec);
        for (u, v) in y1.iter().zip(&y2) {
            assert!((u - a * v).abs() <= 1e-12 * u.abs().max(1.0));
        }
    }
}
