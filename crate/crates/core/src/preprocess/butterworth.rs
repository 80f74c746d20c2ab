//! Butterworth band-stop design (bilinear transform) and zero-phase filtering.

use num_complex::Complex64;

/// Digital IIR transfer function `H(z) = b(z^-1) / a(z^-1)`, `a[0] == 1`.
#[derive(Debug, Clone)]
pub struct Iir {
    pub b: Vec<f64>,
    pub a: Vec<f64>,
}

/// Design an order-`order` Butterworth band-stop with stopband edges
/// `[lo, hi]` Hz at sampling rate `fs`. The digital filter has `2*order`
/// poles (the band transform doubles the prototype order).
pub fn butter_bandstop(order: usize, lo: f64, hi: f64, fs: f64) -> Iir {
    assert!(order >= 1);
    assert!(
        0.0 < lo && lo < hi && hi < fs / 2.0,
        "stopband [{lo}, {hi}] must sit inside (0, {})",
        fs / 2.0
    );

    // Analog Butterworth low-pass prototype: poles on the unit circle's
    // left half, no zeros, unit gain.
    let n = order as i32;
    let prototype: Vec<Complex64> = (1..=n)
        .map(|k| {
            let theta = std::f64::consts::PI * (2 * k + n - 1) as f64 / (2 * n) as f64;
            Complex64::new(theta.cos(), theta.sin())
        })
        .collect();

    // Prewarped band edges, rad/s.
    let warp = |f: f64| 2.0 * fs * (std::f64::consts::PI * f / fs).tan();
    let w1 = warp(lo);
    let w2 = warp(hi);
    let w0 = (w1 * w2).sqrt();
    let bw = w2 - w1;

    // Low-pass -> band-stop: s_lp = bw*s / (s^2 + w0^2).
    // Each prototype pole p yields the two roots of s^2 - (bw/p) s + w0^2.
    let mut poles = Vec::with_capacity(2 * order);
    let mut zeros = Vec::with_capacity(2 * order);
    let w0sq = Complex64::new(w0 * w0, 0.0);
    for p in &prototype {
        let half = (Complex64::new(bw, 0.0) / p) * 0.5;
        let disc = (half * half - w0sq).sqrt();
        poles.push(half + disc);
        poles.push(half - disc);
        zeros.push(Complex64::new(0.0, w0));
        zeros.push(Complex64::new(0.0, -w0));
    }
    // Analog gain is exactly 1 (DC maps to the prototype's DC).

    // Bilinear transform with z = (2fs + s) / (2fs - s).
    let fs2 = Complex64::new(2.0 * fs, 0.0);
    let zd: Vec<Complex64> = zeros.iter().map(|z| (fs2 + z) / (fs2 - z)).collect();
    let pd: Vec<Complex64> = poles.iter().map(|p| (fs2 + p) / (fs2 - p)).collect();
    let num: Complex64 = zeros.iter().map(|z| fs2 - z).product();
    let den: Complex64 = poles.iter().map(|p| fs2 - p).product();
    let k = (num / den).re;

    let mut b = poly_from_roots(&zd);
    let a = poly_from_roots(&pd);
    for c in &mut b {
        *c *= k;
    }
    Iir { b, a }
}

/// Design an order-`order` Butterworth band-pass with passband `[lo, hi]` Hz.
pub fn butter_bandpass(order: usize, lo: f64, hi: f64, fs: f64) -> Iir {
    assert!(order >= 1);
    assert!(
        0.0 < lo && lo < hi && hi < fs / 2.0,
        "passband [{lo}, {hi}] must sit inside (0, {})",
        fs / 2.0
    );
    let n = order as i32;
    let prototype: Vec<Complex64> = (1..=n)
        .map(|k| {
            let theta = std::f64::consts::PI * (2 * k + n - 1) as f64 / (2 * n) as f64;
            Complex64::new(theta.cos(), theta.sin())
        })
        .collect();

    let warp = |f: f64| 2.0 * fs * (std::f64::consts::PI * f / fs).tan();
    let w1 = warp(lo);
    let w2 = warp(hi);
    let w0sq = Complex64::new(w1 * w2, 0.0);
    let bw = w2 - w1;

    // Low-pass -> band-pass: s_lp = (s^2 + w0^2) / (bw*s). Each prototype
    // pole p yields the two roots of s^2 - p*bw*s + w0^2; zeros land at 0.
    let mut poles = Vec::with_capacity(2 * order);
    for p in &prototype {
        let half = p * (bw * 0.5);
        let disc = (half * half - w0sq).sqrt();
        poles.push(half + disc);
        poles.push(half - disc);
    }
    let zeros = vec![Complex64::new(0.0, 0.0); order];
    let k = bw.powi(n);

    let fs2 = Complex64::new(2.0 * fs, 0.0);
    let zd: Vec<Complex64> = zeros
        .iter()
        .map(|z| (fs2 + z) / (fs2 - z))
        // The band transform leaves `order` zeros at infinity; bilinear maps
        // those to z = -1.
        .chain(std::iter::repeat(Complex64::new(-1.0, 0.0)).take(order))
        .collect();
    let pd: Vec<Complex64> = poles.iter().map(|p| (fs2 + p) / (fs2 - p)).collect();
    let num: Complex64 = zeros.iter().map(|z| fs2 - z).product();
    let den: Complex64 = poles.iter().map(|p| fs2 - p).product();
    let k_d = (Complex64::new(k, 0.0) * num / den).re;

    let mut b = poly_from_roots(&zd);
    let a = poly_from_roots(&pd);
    for c in &mut b {
        *c *= k_d;
    }
    Iir { b, a }
}

/// Expand a polynomial with the given (conjugate-paired) roots; returns real
/// coefficients, highest order first in `z^-1` terms, leading 1.
fn poly_from_roots(roots: &[Complex64]) -> Vec<f64> {
    let mut coeffs = vec![Complex64::new(1.0, 0.0)];
    for r in roots {
        coeffs.push(Complex64::new(0.0, 0.0));
        for i in (1..coeffs.len()).rev() {
            let prev = coeffs[i - 1];
            coeffs[i] -= r * prev;
        }
    }
    coeffs.iter().map(|c| c.re).collect()
}

impl Iir {
    /// Magnitude of the single-pass response at frequency `f` Hz.
    pub fn magnitude_at(&self, f: f64, fs: f64) -> f64 {
        let w = 2.0 * std::f64::consts::PI * f / fs;
        let z = Complex64::new(0.0, -w).exp(); // z^-1
        let eval = |c: &[f64]| {
            let mut acc = Complex64::new(0.0, 0.0);
            for &ck in c.iter().rev() {
                acc = acc * z + ck;
            }
            acc
        };
        (eval(&self.b) / eval(&self.a)).norm()
    }

    /// Direct-form II transposed single-pass filter.
    pub fn filter(&self, x: &[f64]) -> Vec<f64> {
        let order = self.a.len().max(self.b.len()) - 1;
        let mut b = self.b.clone();
        let mut a = self.a.clone();
        b.resize(order + 1, 0.0);
        a.resize(order + 1, 0.0);
        let mut state = vec![0.0; order];
        let mut y = Vec::with_capacity(x.len());
        for &xi in x {
            let yi = b[0] * xi + state[0];
            for s in 0..order {
                let next = if s + 1 < order { state[s + 1] } else { 0.0 };
                state[s] = next + b[s + 1] * xi - a[s + 1] * yi;
            }
            y.push(yi);
        }
        y
    }

    /// Forward-backward (zero-phase) filtering with odd-reflection padding at
    /// both ends to suppress start-up transients. Output length equals input
    /// length; the effective magnitude response is `|H|^2`.
    pub fn filtfilt(&self, x: &[f64]) -> Vec<f64> {
        let pad = 3 * self.a.len().max(self.b.len());
        if x.is_empty() {
            return Vec::new();
        }
        let pad = pad.min(x.len().saturating_sub(1));
        let n = x.len();
        let mut ext = Vec::with_capacity(n + 2 * pad);
        for i in (1..=pad).rev() {
            ext.push(2.0 * x[0] - x[i]);
        }
        ext.extend_from_slice(x);
        for i in 1..=pad {
            ext.push(2.0 * x[n - 1] - x[n - 1 - i]);
        }
        let mut y = self.filter(&ext);
        y.reverse();
        let mut y = self.filter(&y);
        y.reverse();
        y[pad..pad + n].to_vec()
    }
}
