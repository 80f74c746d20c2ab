//! Named parameter storage shared across training steps.

use super::Real;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// How a parameter tensor is initialized.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Ones,
    /// Gaussian with the given standard deviation.
    Normal(f64),
    /// Uniform in `[-limit, limit]`.
    Uniform(f64),
}

#[derive(Debug, Clone)]
pub struct Param<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<T>,
    pub grad: Vec<T>,
    /// Non-trainable entries (running statistics) are persisted but skipped
    /// by the optimizer and carry no gradient.
    pub trainable: bool,
}

/// Ordered, named parameter tensors; order is the checkpoint layout.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
    by_name: std::collections::HashMap<String, usize>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            by_name: std::collections::HashMap::new(),
        }
    }

    pub fn add(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        init: Init,
        trainable: bool,
        rng: &mut ChaCha8Rng,
    ) -> usize {
        let name = name.into();
        assert!(
            !self.by_name.contains_key(&name),
            "duplicate parameter '{name}'"
        );
        let n: usize = shape.iter().product();
        let value: Vec<T> = match init {
            Init::Zeros => vec![T::zero(); n],
            Init::Ones => vec![T::one(); n],
            Init::Normal(sd) => (0..n)
                .map(|_| T::from_f64(sd * standard_normal(rng)))
                .collect(),
            Init::Uniform(limit) => (0..n)
                .map(|_| T::from_f64(rng.gen_range(-limit..=limit)))
                .collect(),
        };
        self.params.push(Param {
            name: name.clone(),
            shape: shape.to_vec(),
            value,
            grad: vec![T::zero(); n],
            trainable,
        });
        self.by_name.insert(name, self.params.len() - 1);
        self.params.len() - 1
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn param(&self, idx: usize) -> &Param<T> {
        &self.params[idx]
    }

    pub fn param_mut(&mut self, idx: usize) -> &mut Param<T> {
        &mut self.params[idx]
    }

    pub fn index_of(&self, name: &str) -> usize {
        *self
            .by_name
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter '{name}'"))
    }

    pub fn get(&self, name: &str) -> &Param<T> {
        self.param(self.index_of(name))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Param<T> {
        let idx = self.index_of(name);
        self.param_mut(idx)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.by_name.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub(super) fn accumulate_grad(&mut self, idx: usize, g: &[T]) {
        let p = &mut self.params[idx];
        debug_assert_eq!(p.grad.len(), g.len());
        for (o, &gi) in p.grad.iter_mut().zip(g) {
            *o += gi;
        }
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = T::zero());
        }
    }

    /// Total number of stored scalars.
    pub fn n_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Cast every tensor (used to build the f64 shadow of an f32 store).
    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        let mut out = ParamStore::new();
        for p in &self.params {
            out.params.push(Param {
                name: p.name.clone(),
                shape: p.shape.clone(),
                value: p.value.iter().map(|v| U::from_f64(v.to_f64())).collect(),
                grad: vec![U::zero(); p.grad.len()],
                trainable: p.trainable,
            });
            out.by_name.insert(p.name.clone(), out.params.len() - 1);
        }
        out
    }
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}
