//! Adam with bias correction.

use super::{ParamStore, Real};

#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    /// First/second moment buffers, parallel to the parameter store.
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(store: &ParamStore<T>, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: store.iter().map(|p| vec![T::zero(); p.value.len()]).collect(),
            v: store.iter().map(|p| vec![T::zero(); p.value.len()]).collect(),
        }
    }

    /// One update over every trainable parameter; gradients are consumed
    /// (zeroed) afterwards.
    pub fn step(&mut self, store: &mut ParamStore<T>) {
        assert_eq!(self.m.len(), store.len(), "optimizer/store size mismatch");
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for idx in 0..store.len() {
            if !store.param(idx).trainable {
                continue;
            }
            let p = store.param_mut(idx);
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            for i in 0..p.value.len() {
                let g = p.grad[i].to_f64();
                let mi = self.beta1 * m[i].to_f64() + (1.0 - self.beta1) * g;
                let vi = self.beta2 * v[i].to_f64() + (1.0 - self.beta2) * g * g;
                m[i] = T::from_f64(mi);
                v[i] = T::from_f64(vi);
                let mhat = mi / bc1;
                let vhat = vi / bc2;
                let update = self.lr * mhat / (vhat.sqrt() + self.eps);
                p.value[i] = T::from_f64(p.value[i].to_f64() - update);
            }
        }
        store.zero_grads();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::{Init, Tape};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_grads_leave_params_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store: ParamStore<f64> = ParamStore::new();
        store.add("w", &[4], Init::Normal(0.1), true, &mut rng);
        let before = store.get("w").value.clone();
        let mut adam = AdamState::new(&store, 0.1);
        adam.step(&mut store);
        assert_eq!(store.get("w").value, before);
        assert_eq!(adam.step, 1);
    }

    #[test]
    fn first_step_magnitude_is_the_learning_rate() {
        // With bias correction, the first update is lr * g / (|g| + eps').
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store: ParamStore<f64> = ParamStore::new();
        store.add("w", &[3], Init::Ones, true, &mut rng);
        let mut tape = Tape::new();
        let w = tape.param(&store, 0);
        let c = tape.constant(vec![2.0, -3.0, 0.5], &[3]);
        let prod = tape.mul(w, c);
        let loss = tape.sum(prod);
        tape.backward(loss, &mut store);
        let mut adam = AdamState::new(&store, 0.05);
        adam.step(&mut store);
        for (i, &v) in store.get("w").value.iter().enumerate() {
            let direction = [1.0f64, -1.0, 1.0][i];
            let expected = 1.0 - 0.05 * direction;
            assert!((v - expected).abs() < 1e-6, "coord {i}: {v} vs {expected}");
        }
    }

    #[test]
    fn quadratic_converges_to_its_minimum() {
        // Oracle: a scalar reference run of the same Adam recurrence.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store: ParamStore<f64> = ParamStore::new();
        store.add("x", &[1], Init::Zeros, true, &mut rng);
        let mut adam = AdamState::new(&store, 0.1);

        let (mut rm, mut rv, mut rx) = (0.0f64, 0.0f64, 0.0f64);
        for t in 1..=500u64 {
            let x = store.get("x").value[0];
            let mut tape: Tape<f64> = Tape::new();
            let xv = tape.param(&store, 0);
            let three = tape.constant(vec![3.0], &[1]);
            let neg = tape.scale(three, -1.0);
            let diff = tape.add(xv, neg);
            let sq = tape.mul(diff, diff);
            let loss = tape.sum(sq);
            tape.backward(loss, &mut store);
            adam.step(&mut store);

            // Reference recurrence.
            let g = 2.0 * (rx - 3.0);
            rm = 0.9 * rm + 0.1 * g;
            rv = 0.999 * rv + 0.001 * g * g;
            let mhat = rm / (1.0 - 0.9f64.powi(t as i32));
            let vhat = rv / (1.0 - 0.999f64.powi(t as i32));
            rx -= 0.1 * mhat / (vhat.sqrt() + 1e-8);
            assert!(
                (store.get("x").value[0] - rx).abs() < 1e-9,
                "step {t}: engine {x} vs reference {rx}"
            );
        }
        assert!((store.get("x").value[0] - 3.0).abs() < 0.01);
    }

    #[test]
    fn non_trainable_params_are_skipped() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store: ParamStore<f64> = ParamStore::new();
        store.add("stat", &[2], Init::Ones, false, &mut rng);
        let before = store.get("stat").value.clone();
        store.get_mut("stat").grad = vec![5.0, 5.0];
        let mut adam = AdamState::new(&store, 0.5);
        adam.step(&mut store);
        assert_eq!(store.get("stat").value, before);
    }
}
