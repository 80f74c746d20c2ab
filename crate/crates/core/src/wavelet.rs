//! Daubechies-4 wavelet machinery shared by preprocessing and delineation.
//!
//! Two transforms live here:
//!
//! * a decimated multi-level DWT ([`wavedec`]/[`waverec`]) used to estimate
//!   baseline wander from the deep approximation band, and
//! * an undecimated ("algorithme a trous") detail stack ([`swt_details`])
//!   whose per-scale modulus envelopes drive wave delineation.
//!
//! The decimated transform extends the input at both ends (symmetric
//! reflection by default) far enough that the periodized filter bank's
//! wrap-around never reaches the retained center, then crops back to the
//! original length. That keeps perfect reconstruction exact for any input
//! length and level count.

/// db4 orthonormal scaling (low-pass) filter.
pub const DB4_LO: [f64; 8] = [
    0.230_377_813_308_855_23,
    0.714_846_570_552_541_5,
    0.630_880_767_929_590_4,
    -0.027_983_769_416_983_85,
    -0.187_034_811_718_881_14,
    0.030_841_381_835_986_965,
    0.032_883_011_666_982_945,
    -0.010_597_401_784_997_278,
];

/// Quadrature mirror of [`DB4_LO`]: `hi[k] = (-1)^k lo[7-k]`.
pub const DB4_HI: [f64; 8] = [
    -0.010_597_401_784_997_278,
    -0.032_883_011_666_982_945,
    0.030_841_381_835_986_965,
    0.187_034_811_718_881_14,
    -0.027_983_769_416_983_85,
    -0.630_880_767_929_590_4,
    0.714_846_570_552_541_5,
    -0.230_377_813_308_855_23,
];

/// Boundary extension applied before transforming.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Extension {
    /// Half-sample mirror: `..., x1, x0 | x0, x1, ...`
    Symmetric,
    /// Point reflection about the edge value: `..., 2*x0 - x1 | x0, x1, ...`
    /// Preserves linear trends across the boundary.
    Antireflect,
}

/// Extended-signal lookup for any integer index.
fn extended(x: &[f64], i: isize, mode: Extension) -> f64 {
    let n = x.len() as isize;
    debug_assert!(n > 0);
    match mode {
        Extension::Symmetric => {
            // Fold onto [0, 2n) with period 2n, then mirror the upper half.
            let p = i.rem_euclid(2 * n);
            let m = if p < n { p } else { 2 * n - 1 - p };
            x[m as usize]
        }
        Extension::Antireflect => {
            if i < 0 {
                2.0 * x[0] - extended(x, -i, mode)
            } else if i >= n {
                2.0 * x[(n - 1) as usize] - extended(x, 2 * (n - 1) - i, mode)
            } else {
                x[i as usize]
            }
        }
    }
}

/// Multi-level decomposition. `details[j]` holds level `j+1`.
#[derive(Debug, Clone)]
pub struct WaveDec {
    pub approx: Vec<f64>,
    pub details: Vec<Vec<f64>>,
    orig_len: usize,
    pad_left: usize,
}

/// One periodized analysis step on an even-length signal.
fn dwt_step(x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = x.len();
    debug_assert!(n % 2 == 0);
    let half = n / 2;
    let mut a = vec![0.0; half];
    let mut d = vec![0.0; half];
    for i in 0..half {
        let mut sa = 0.0;
        let mut sd = 0.0;
        for (k, (&lo, &hi)) in DB4_LO.iter().zip(DB4_HI.iter()).enumerate() {
            let v = x[(2 * i + k) % n];
            sa += lo * v;
            sd += hi * v;
        }
        a[i] = sa;
        d[i] = sd;
    }
    (a, d)
}

/// Periodized synthesis step (transpose of [`dwt_step`]).
fn idwt_step(a: &[f64], d: &[f64]) -> Vec<f64> {
    let half = a.len();
    let n = half * 2;
    let mut x = vec![0.0; n];
    for i in 0..half {
        for (k, (&lo, &hi)) in DB4_LO.iter().zip(DB4_HI.iter()).enumerate() {
            x[(2 * i + k) % n] += lo * a[i] + hi * d[i];
        }
    }
    x
}

fn pad_for(levels: usize, n: usize) -> (usize, usize) {
    // Influence radius of an L-level analysis/synthesis pass.
    let radius = (DB4_LO.len() - 1) * ((1 << levels) - 1) + DB4_LO.len();
    let block = 1usize << levels;
    let min_total = n + 2 * radius;
    let total = min_total.div_ceil(block) * block;
    let pad_left = (total - n) / 2;
    (pad_left, total)
}

/// Decompose `x` into `levels` detail bands plus one approximation band.
pub fn wavedec(x: &[f64], levels: usize, mode: Extension) -> WaveDec {
    assert!(levels >= 1, "need at least one decomposition level");
    assert!(!x.is_empty(), "cannot transform an empty signal");
    let (pad_left, total) = pad_for(levels, x.len());
    let mut cur: Vec<f64> = (0..total)
        .map(|i| extended(x, i as isize - pad_left as isize, mode))
        .collect();
    let mut details = Vec::with_capacity(levels);
    for _ in 0..levels {
        let (a, d) = dwt_step(&cur);
        details.push(d);
        cur = a;
    }
    WaveDec {
        approx: cur,
        details,
        orig_len: x.len(),
        pad_left,
    }
}

/// Invert [`wavedec`], cropping back to the original length.
pub fn waverec(dec: &WaveDec) -> Vec<f64> {
    let mut cur = dec.approx.clone();
    for d in dec.details.iter().rev() {
        cur = idwt_step(&cur, d);
    }
    cur[dec.pad_left..dec.pad_left + dec.orig_len].to_vec()
}

/// Low-frequency baseline: reconstruction from the level-`levels`
/// approximation band alone (all detail bands zeroed).
pub fn baseline(x: &[f64], levels: usize, mode: Extension) -> Vec<f64> {
    let mut dec = wavedec(x, levels, mode);
    for d in &mut dec.details {
        d.iter_mut().for_each(|v| *v = 0.0);
    }
    waverec(&dec)
}

/// Undecimated detail coefficients, one signal-length vector per level
/// (index 0 = level 1). Each level is center-aligned with the input.
pub fn swt_details(x: &[f64], levels: usize, mode: Extension) -> Vec<Vec<f64>> {
    assert!(levels >= 1 && !x.is_empty());
    let n = x.len();
    let mut approx: Vec<f64> = x.to_vec();
    let mut out = Vec::with_capacity(levels);
    for level in 0..levels {
        let gap = 1isize << level; // holes between taps + 1
        let support = gap * (DB4_LO.len() as isize - 1) + 1;
        let center = support / 2;
        let mut next_a = vec![0.0; n];
        let mut d = vec![0.0; n];
        for i in 0..n {
            let mut sa = 0.0;
            let mut sd = 0.0;
            for (k, (&lo, &hi)) in DB4_LO.iter().zip(DB4_HI.iter()).enumerate() {
                let idx = i as isize + gap * k as isize - center;
                // Approximation carries the previous level's boundary
                // handling; extend the current buffer directly.
                let v = extended(&approx, idx, mode);
                sa += lo * v;
                sd += hi * v;
            }
            next_a[i] = sa;
            d[i] = sd;
        }
        out.push(d);
        approx = next_a;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn filters_are_orthonormal() {
        let sum: f64 = DB4_LO.iter().sum();
        let energy: f64 = DB4_LO.iter().map(|v| v * v).sum();
        let hi_sum: f64 = DB4_HI.iter().sum();
        assert!((sum - std::f64::consts::SQRT_2).abs() < 1e-12);
        assert!((energy - 1.0).abs() < 1e-12);
        assert!(hi_sum.abs() < 1e-12);
    }

    #[test]
    fn perfect_reconstruction_across_lengths_and_levels() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for &n in &[8usize, 37, 100, 251, 600] {
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            for levels in 1..=4 {
                for mode in [Extension::Symmetric, Extension::Antireflect] {
                    let rec = waverec(&wavedec(&x, levels, mode));
                    assert_eq!(rec.len(), n);
                    let err = x
                        .iter()
                        .zip(&rec)
                        .map(|(a, b)| (a - b).abs())
                        .fold(0.0, f64::max);
                    assert!(err < 1e-10, "n={n} levels={levels} mode={mode:?} err={err}");
                }
            }
        }
    }

    #[test]
    fn deep_levels_reconstruct_short_signals() {
        let x: Vec<f64> = (0..40).map(|i| (i as f64 * 0.3).sin()).collect();
        let rec = waverec(&wavedec(&x, 8, Extension::Symmetric));
        let err = x
            .iter()
            .zip(&rec)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-9, "err={err}");
    }

    #[test]
    fn constant_baseline_is_the_constant() {
        let x = vec![3.5; 512];
        let b = baseline(&x, 8, Extension::Symmetric);
        for v in &b {
            assert!((v - 3.5).abs() < 1e-9);
        }
    }

    #[test]
    fn details_of_a_constant_vanish() {
        let x = vec![-1.25; 300];
        for d in swt_details(&x, 5, Extension::Symmetric) {
            for v in d {
                assert!(v.abs() < 1e-10);
            }
        }
    }

    #[test]
    fn swt_detail_levels_are_signal_length() {
        let x: Vec<f64> = (0..997).map(|i| (i as f64 * 0.05).sin()).collect();
        let ds = swt_details(&x, 5, Extension::Symmetric);
        assert_eq!(ds.len(), 5);
        assert!(ds.iter().all(|d| d.len() == x.len()));
    }

    #[test]
    fn swt_detail_peak_tracks_an_impulse() {
        // A centered impulse must produce detail energy centered near it.
        let mut x = vec![0.0; 601];
        x[300] = 1.0;
        for (j, d) in swt_details(&x, 4, Extension::Symmetric).iter().enumerate() {
            let peak = d
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
                .unwrap()
                .0 as isize;
            let tol = 4 << j;
            assert!(
                (peak - 300).abs() <= tol,
                "level {} peak at {peak}, tolerance {tol}",
                j + 1
            );
        }
    }
}
