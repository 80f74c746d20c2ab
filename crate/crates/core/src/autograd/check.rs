//! Central finite-difference verification of backward rules.
//!
//! Runs at `f64` so the difference quotient is not drowned by storage
//! rounding. Every primitive's unit test and the composed-model acceptance
//! check go through [`check_gradients`].

use super::{Real, Tape, Var};

/// Result of one finite-difference sweep.
#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    pub max_rel_err: f64,
    pub checked: usize,
}

/// Compare reverse-mode gradients of `f` against central finite differences
/// for every coordinate of every input. Returns the worst relative error,
/// where each comparison is normalized by `max(|analytic|, |numeric|, 1e-6)`.
pub fn check_gradients<F>(inputs: &[(Vec<f64>, Vec<usize>)], eps: f64, f: F) -> GradCheck
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Var,
{
    let run = |values: &[Vec<f64>]| -> (f64, Vec<Vec<f64>>) {
        let mut tape: Tape<f64> = Tape::new();
        let vars: Vec<Var> = values
            .iter()
            .zip(inputs)
            .map(|(v, (_, shape))| tape.input(v.clone(), shape))
            .collect();
        let loss = f(&mut tape, &vars);
        let grads = vars
            .iter()
            .map(|&v| tape.grad_of_input(loss, v))
            .collect();
        (tape.value_scalar(loss), grads)
    };

    let base: Vec<Vec<f64>> = inputs.iter().map(|(v, _)| v.clone()).collect();
    let (_, analytic) = run(&base);

    let mut max_rel = 0.0f64;
    let mut checked = 0usize;
    for (ti, (values, _)) in inputs.iter().enumerate() {
        for ci in 0..values.len() {
            let mut plus = base.clone();
            plus[ti][ci] += eps;
            let mut minus = base.clone();
            minus[ti][ci] -= eps;
            let (lp, _) = run(&plus);
            let (lm, _) = run(&minus);
            let numeric = (lp - lm) / (2.0 * eps);
            let a = analytic[ti][ci];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            if rel > max_rel {
                max_rel = rel;
            }
            checked += 1;
        }
    }
    GradCheck {
        max_rel_err: max_rel,
        checked,
    }
}

/// Deterministic pseudo-random fill for check inputs.
pub fn fill(seed: u64, n: usize) -> Vec<f64> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Shadow copy helper: cast an `f32` store's values into `f64` vectors.
pub fn to_f64_values<T: Real>(values: &[T]) -> Vec<f64> {
    values.iter().map(|v| v.to_f64()).collect()
}
