//! Minimal dense-tensor engine with reverse-mode differentiation.
//!
//! A [`Tape`] records every forward operation as a node; [`Tape::backward`]
//! walks the record in reverse, accumulating gradients into parameter leaves.
//! Storage is generic over [`Real`] so the model runs in `f32` while
//! gradient checks use an `f64` shadow of the same code path. Reductions
//! (matmul and convolution inner products, norms, means, softmax sums)
//! always accumulate in `f64`.
//!
//! Shapes are validated at op-construction time; a mismatch panics with both
//! shapes in the message, since model code controls shapes statically.

mod adam;
pub mod check;
mod params;

pub use adam::AdamState;
pub use params::{ParamStore, Init};

/// Scalar storage type of a tape: `f32` for training, `f64` for checks.
pub trait Real:
    Copy
    + PartialOrd
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<Output = Self>
    + std::ops::Div<Output = Self>
    + std::ops::Neg<Output = Self>
    + std::ops::AddAssign
    + std::ops::MulAssign
    + std::fmt::Debug
    + Default
    + Send
    + Sync
    + 'static
{
    fn zero() -> Self;
    fn one() -> Self;
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Real for f32 {
    fn zero() -> Self {
        0.0
    }
    fn one() -> Self {
        1.0
    }
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn zero() -> Self {
        0.0
    }
    fn one() -> Self {
        1.0
    }
    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
}

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

struct Node<T> {
    shape: Vec<usize>,
    data: Vec<T>,
    requires_grad: bool,
    op: Op,
}

enum Op {
    Leaf {
        param: Option<usize>,
    },
    Add(Var, Var),
    AddBiasRow(Var, Var),
    AddBiasChannel(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    /// Adds a constant row vector to every row; the row gets no gradient.
    AddRowConst(Var),
    Matmul(Var, Var),
    Transpose2d(Var),
    Relu(Var),
    Gelu(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        /// Per-row (mean, inv_sd).
        cache: Vec<(f64, f64)>,
    },
    BatchNorm1d {
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
        /// Per-channel (mean, var) used by this forward pass.
        stats: Vec<(f64, f64)>,
        /// Normalization count (N*L) when training; 0 marks eval mode.
        train_count: usize,
    },
    Conv1d {
        x: Var,
        w: Var,
        stride: usize,
        padding: usize,
    },
    TransposedConv1d {
        x: Var,
        w: Var,
        stride: usize,
    },
    MaxPool1d {
        x: Var,
        argmax: Vec<usize>,
    },
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    GatherRows {
        x: Var,
        rows: Vec<usize>,
    },
    ConcatChannels(Vec<Var>),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    PadLength {
        x: Var,
    },
    SpanMax {
        features: Var,
        argmax: Vec<Option<Vec<usize>>>,
    },
    SliceRows {
        x: Var,
        start: usize,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    CropLength {
        x: Var,
        start: usize,
    },
    MeanAxis0(Var),
    MeanAxis1(Var),
    Sum(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<i32>,
        /// Row-major softmax probabilities.
        probs: Vec<f64>,
        count: usize,
    },
    SpanMeans {
        features: Var,
        spans: Vec<Option<(usize, usize, usize)>>,
    },
    RowsToConvLayout {
        x: Var,
        batch: usize,
    },
    MaskedMeanLength {
        x: Var,
        mask: Vec<Vec<u8>>,
    },
    Dropout {
        x: Var,
        keep: Vec<bool>,
        scale: f64,
    },
    Reshape(Var),
}

/// Forward-operation recorder.
pub struct Tape<T: Real> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn data(&self, v: Var) -> &[T] {
        &self.nodes[v.0].data
    }

    pub fn value_scalar(&self, v: Var) -> f64 {
        assert_eq!(numel(&self.nodes[v.0].shape), 1, "expected a scalar");
        self.nodes[v.0].data[0].to_f64()
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<T>, requires_grad: bool, op: Op) -> Var {
        debug_assert_eq!(numel(&shape), data.len());
        self.nodes.push(Node {
            shape,
            data,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs_grad(&self, vs: &[Var]) -> bool {
        vs.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Constant input (no gradient).
    pub fn constant(&mut self, data: Vec<T>, shape: &[usize]) -> Var {
        assert_eq!(
            numel(shape),
            data.len(),
            "constant: {} values do not fill shape {shape:?}",
            data.len()
        );
        self.push(shape.to_vec(), data, false, Op::Leaf { param: None })
    }

    pub fn constant_f64(&mut self, data: &[f64], shape: &[usize]) -> Var {
        let cast = data.iter().map(|&v| T::from_f64(v)).collect();
        self.constant(cast, shape)
    }

    /// Differentiable leaf not tied to a parameter store (used by checks).
    pub fn input(&mut self, data: Vec<T>, shape: &[usize]) -> Var {
        assert_eq!(numel(shape), data.len());
        self.push(shape.to_vec(), data, true, Op::Leaf { param: None })
    }

    /// Leaf holding a copy of parameter `idx`; gradients flow back to the
    /// store on [`Tape::backward`].
    pub fn param(&mut self, store: &ParamStore<T>, idx: usize) -> Var {
        let p = store.param(idx);
        self.push(
            p.shape.clone(),
            p.value.clone(),
            p.trainable,
            Op::Leaf { param: Some(idx) },
        )
    }

    pub fn by_name(&mut self, store: &ParamStore<T>, name: &str) -> Var {
        let idx = store.index_of(name);
        self.param(store, idx)
    }
}

mod ops;

#[cfg(test)]
mod tests;

impl<T: Real> Tape<T> {
    /// Reverse-mode sweep from a scalar loss; gradients of parameter leaves
    /// accumulate (`+=`) into the store.
    pub fn backward(&self, loss: Var, store: &mut ParamStore<T>) {
        assert_eq!(
            numel(&self.nodes[loss.0].shape),
            1,
            "backward requires a scalar loss, got shape {:?}",
            self.nodes[loss.0].shape
        );
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![T::one()]);
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            if !self.nodes[id].requires_grad {
                continue;
            }
            if let Op::Leaf { param: Some(idx) } = self.nodes[id].op {
                store.accumulate_grad(idx, &g);
                continue;
            }
            self.backprop_node(id, &g, &mut grads);
        }
    }

    /// Gradient of `loss` with respect to a non-parameter input leaf
    /// (check machinery).
    pub fn grad_of_input(&self, loss: Var, input: Var) -> Vec<T> {
        assert_eq!(numel(&self.nodes[loss.0].shape), 1);
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![T::one()]);
        for id in (0..=loss.0).rev() {
            if id == input.0 {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            if !self.nodes[id].requires_grad {
                continue;
            }
            if matches!(self.nodes[id].op, Op::Leaf { .. }) {
                continue;
            }
            self.backprop_node(id, &g, &mut grads);
        }
        grads[input.0]
            .take()
            .unwrap_or_else(|| vec![T::zero(); self.nodes[input.0].data.len()])
    }
}

fn accumulate<T: Real>(slot: &mut Option<Vec<T>>, len: usize, f: impl FnOnce(&mut [T])) {
    let buf = slot.get_or_insert_with(|| vec![T::zero(); len]);
    f(buf);
}
