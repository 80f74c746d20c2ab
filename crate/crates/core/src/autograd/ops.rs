//! Forward constructors and backward rules for every tape operation.
//!
//! Inner products and statistics accumulate in `f64` regardless of the
//! storage type. Backward passes accumulate into `f64` scratch buffers for
//! the same reason, then cast once into the gradient slots.

use super::{accumulate, numel, Node, Op, Real, Tape, Var};
use rand::Rng;

fn assert_same_shape(what: &str, a: &[usize], b: &[usize]) {
    assert_eq!(a, b, "{what}: shape mismatch {a:?} vs {b:?}");
}

impl<T: Real> Tape<T> {
    fn node(&self, v: Var) -> &Node<T> {
        &self.nodes[v.0]
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_same_shape("add", &self.node(a).shape, &self.node(b).shape);
        let data = self
            .node(a)
            .data
            .iter()
            .zip(&self.node(b).data)
            .map(|(&x, &y)| x + y)
            .collect();
        let rg = self.needs_grad(&[a, b]);
        let shape = self.node(a).shape.clone();
        self.push(shape, data, rg, Op::Add(a, b))
    }

    /// `x` is `[R, C]`, `bias` is `[C]`; the bias is added to every row.
    pub fn add_bias_row(&mut self, x: Var, bias: Var) -> Var {
        let (shape, c) = {
            let s = &self.node(x).shape;
            assert_eq!(s.len(), 2, "add_bias_row: x must be 2-D, got {s:?}");
            (s.clone(), s[1])
        };
        assert_eq!(
            self.node(bias).shape,
            vec![c],
            "add_bias_row: bias {:?} does not match row width {c}",
            self.node(bias).shape
        );
        let mut data = self.node(x).data.clone();
        for (i, v) in data.iter_mut().enumerate() {
            *v += self.node(bias).data[i % c];
        }
        let rg = self.needs_grad(&[x, bias]);
        self.push(shape, data, rg, Op::AddBiasRow(x, bias))
    }

    /// `x` is `[N, C, L]`, `bias` is `[C]`.
    pub fn add_bias_channel(&mut self, x: Var, bias: Var) -> Var {
        let shape = self.node(x).shape.clone();
        assert_eq!(shape.len(), 3, "add_bias_channel: x must be 3-D, got {shape:?}");
        let (c, l) = (shape[1], shape[2]);
        assert_eq!(
            self.node(bias).shape,
            vec![c],
            "add_bias_channel: bias {:?} does not match {c} channels",
            self.node(bias).shape
        );
        let mut data = self.node(x).data.clone();
        for (i, v) in data.iter_mut().enumerate() {
            *v += self.node(bias).data[(i / l) % c];
        }
        let rg = self.needs_grad(&[x, bias]);
        self.push(shape, data, rg, Op::AddBiasChannel(x, bias))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_same_shape("mul", &self.node(a).shape, &self.node(b).shape);
        let data = self
            .node(a)
            .data
            .iter()
            .zip(&self.node(b).data)
            .map(|(&x, &y)| x * y)
            .collect();
        let rg = self.needs_grad(&[a, b]);
        let shape = self.node(a).shape.clone();
        self.push(shape, data, rg, Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let data = self
            .node(x)
            .data
            .iter()
            .map(|&v| v * T::from_f64(c))
            .collect();
        let rg = self.needs_grad(&[x]);
        let shape = self.node(x).shape.clone();
        self.push(shape, data, rg, Op::Scale(x, c))
    }

    /// Add a constant (non-differentiable) row vector to every row of a 2-D
    /// value; this is how attention masks reach the scores.
    pub fn add_row_const(&mut self, x: Var, row: &[f64]) -> Var {
        let shape = self.node(x).shape.clone();
        assert_eq!(shape.len(), 2, "add_row_const: x must be 2-D, got {shape:?}");
        assert_eq!(shape[1], row.len(), "add_row_const: row width mismatch");
        let row_t: Vec<T> = row.iter().map(|&v| T::from_f64(v)).collect();
        let c = shape[1];
        let mut data = self.node(x).data.clone();
        for (i, v) in data.iter_mut().enumerate() {
            *v += row_t[i % c];
        }
        let rg = self.needs_grad(&[x]);
        self.push(shape, data, rg, Op::AddRowConst(x))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = {
            let s = &self.node(a).shape;
            assert_eq!(s.len(), 2, "matmul: lhs must be 2-D, got {s:?}");
            (s[0], s[1])
        };
        let (k2, n) = {
            let s = &self.node(b).shape;
            assert_eq!(s.len(), 2, "matmul: rhs must be 2-D, got {s:?}");
            (s[0], s[1])
        };
        assert_eq!(
            k, k2,
            "matmul: inner dimensions differ: {:?} x {:?}",
            self.node(a).shape,
            self.node(b).shape
        );
        let av = &self.node(a).data;
        let bv = &self.node(b).data;
        let mut data = vec![T::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                let mut acc = 0.0f64;
                for p in 0..k {
                    acc += av[i * k + p].to_f64() * bv[p * n + j].to_f64();
                }
                data[i * n + j] = T::from_f64(acc);
            }
        }
        let rg = self.needs_grad(&[a, b]);
        self.push(vec![m, n], data, rg, Op::Matmul(a, b))
    }

    pub fn transpose2d(&mut self, x: Var) -> Var {
        let s = self.node(x).shape.clone();
        assert_eq!(s.len(), 2, "transpose2d: x must be 2-D, got {s:?}");
        let (m, n) = (s[0], s[1]);
        let xv = &self.node(x).data;
        let mut data = vec![T::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = xv[i * n + j];
            }
        }
        let rg = self.needs_grad(&[x]);
        self.push(vec![n, m], data, rg, Op::Transpose2d(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let data = self
            .node(x)
            .data
            .iter()
            .map(|&v| if v > T::zero() { v } else { T::zero() })
            .collect();
        let rg = self.needs_grad(&[x]);
        let shape = self.node(x).shape.clone();
        self.push(shape, data, rg, Op::Relu(x))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let data = self
            .node(x)
            .data
            .iter()
            .map(|&v| T::from_f64(gelu_f(v.to_f64())))
            .collect();
        let rg = self.needs_grad(&[x]);
        let shape = self.node(x).shape.clone();
        self.push(shape, data, rg, Op::Gelu(x))
    }

    /// Row-wise softmax over the last axis of a 2-D value.
    pub fn softmax(&mut self, x: Var) -> Var {
        let shape = self.node(x).shape.clone();
        assert_eq!(shape.len(), 2, "softmax: x must be 2-D, got {shape:?}");
        let (r, c) = (shape[0], shape[1]);
        let xv = &self.node(x).data;
        let mut data = vec![T::zero(); r * c];
        for i in 0..r {
            let row = &xv[i * c..(i + 1) * c];
            let max = row
                .iter()
                .fold(f64::NEG_INFINITY, |m, v| m.max(v.to_f64()));
            let mut denom = 0.0f64;
            let mut exps = vec![0.0f64; c];
            for (j, v) in row.iter().enumerate() {
                let e = (v.to_f64() - max).exp();
                exps[j] = e;
                denom += e;
            }
            for j in 0..c {
                data[i * c + j] = T::from_f64(exps[j] / denom);
            }
        }
        let rg = self.needs_grad(&[x]);
        self.push(shape, data, rg, Op::Softmax(x))
    }

    /// Layer normalization over the last axis of `[R, C]`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let shape = self.node(x).shape.clone();
        assert_eq!(shape.len(), 2, "layer_norm: x must be 2-D, got {shape:?}");
        let (r, c) = (shape[0], shape[1]);
        assert_eq!(self.node(gamma).shape, vec![c], "layer_norm: gamma width");
        assert_eq!(self.node(beta).shape, vec![c], "layer_norm: beta width");
        let xv = &self.node(x).data;
        let gv = &self.node(gamma).data;
        let bv = &self.node(beta).data;
        let mut data = vec![T::zero(); r * c];
        let mut cache = Vec::with_capacity(r);
        for i in 0..r {
            let row = &xv[i * c..(i + 1) * c];
            let mean = row.iter().map(|v| v.to_f64()).sum::<f64>() / c as f64;
            let var = row
                .iter()
                .map(|v| {
                    let d = v.to_f64() - mean;
                    d * d
                })
                .sum::<f64>()
                / c as f64;
            let inv = 1.0 / (var + eps).sqrt();
            cache.push((mean, inv));
            for j in 0..c {
                let xhat = (row[j].to_f64() - mean) * inv;
                data[i * c + j] =
                    T::from_f64(xhat * gv[j].to_f64() + bv[j].to_f64());
            }
        }
        let rg = self.needs_grad(&[x, gamma, beta]);
        self.push(
            shape,
            data,
            rg,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                cache,
            },
        )
    }

    /// Batch normalization over `[N, C, L]` per channel. In training mode the
    /// batch statistics are computed here (readable afterwards via
    /// [`Tape::batch_norm_stats`]); in eval mode the provided running
    /// statistics are used unchanged.
    pub fn batch_norm1d(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
        running: Option<(&[f64], &[f64])>,
    ) -> Var {
        let shape = self.node(x).shape.clone();
        assert_eq!(shape.len(), 3, "batch_norm1d: x must be 3-D, got {shape:?}");
        let (n, c, l) = (shape[0], shape[1], shape[2]);
        assert_eq!(self.node(gamma).shape, vec![c], "batch_norm1d: gamma width");
        assert_eq!(self.node(beta).shape, vec![c], "batch_norm1d: beta width");
        let count = n * l;
        let xv = &self.node(x).data;
        let (stats, train_count): (Vec<(f64, f64)>, usize) = match running {
            Some((means, vars)) => {
                assert_eq!(means.len(), c, "batch_norm1d: running mean width");
                assert_eq!(vars.len(), c, "batch_norm1d: running var width");
                (
                    means.iter().zip(vars).map(|(&m, &v)| (m, v)).collect(),
                    0,
                )
            }
            None => {
                assert!(count > 0, "batch_norm1d: empty batch");
                let mut st = Vec::with_capacity(c);
                for ch in 0..c {
                    let mut sum = 0.0f64;
                    let mut sumsq = 0.0f64;
                    for b in 0..n {
                        for i in 0..l {
                            let v = xv[b * c * l + ch * l + i].to_f64();
                            sum += v;
                            sumsq += v * v;
                        }
                    }
                    let mean = sum / count as f64;
                    let var = (sumsq / count as f64 - mean * mean).max(0.0);
                    st.push((mean, var));
                }
                (st, count)
            }
        };
        let gv = &self.node(gamma).data;
        let bv = &self.node(beta).data;
        let mut data = vec![T::zero(); xv.len()];
        for b in 0..n {
            for ch in 0..c {
                let (mean, var) = stats[ch];
                let inv = 1.0 / (var + eps).sqrt();
                let g = gv[ch].to_f64();
                let be = bv[ch].to_f64();
                for i in 0..l {
                    let idx = b * c * l + ch * l + i;
                    data[idx] = T::from_f64((xv[idx].to_f64() - mean) * inv * g + be);
                }
            }
        }
        let rg = self.needs_grad(&[x, gamma, beta]);
        self.push(
            shape,
            data,
            rg,
            Op::BatchNorm1d {
                x,
                gamma,
                beta,
                eps,
                stats,
                train_count,
            },
        )
    }

    /// Batch statistics `(mean, var)` per channel recorded by a train-mode
    /// [`Tape::batch_norm1d`] node.
    pub fn batch_norm_stats(&self, v: Var) -> Option<&[(f64, f64)]> {
        match &self.node(v).op {
            Op::BatchNorm1d { stats, train_count, .. } if *train_count > 0 => Some(stats),
            _ => None,
        }
    }

    /// 1-D convolution of `[N, Cin, L]` with kernels `[Cout, Cin, K]`; true
    /// convolution semantics (kernel reversed relative to cross-correlation):
    /// `out[o] = sum_k w[k] * x[o*stride + padding - k]`.
    pub fn conv1d(&mut self, x: Var, w: Var, stride: usize, padding: usize) -> Var {
        assert!(stride >= 1);
        let xs = self.node(x).shape.clone();
        let ws = self.node(w).shape.clone();
        assert_eq!(xs.len(), 3, "conv1d: x must be [N, Cin, L], got {xs:?}");
        assert_eq!(ws.len(), 3, "conv1d: w must be [Cout, Cin, K], got {ws:?}");
        let (n, cin, l) = (xs[0], xs[1], xs[2]);
        let (cout, cin2, k) = (ws[0], ws[1], ws[2]);
        assert_eq!(cin, cin2, "conv1d: channel mismatch {xs:?} vs {ws:?}");
        assert!(
            l + 2 * padding >= k,
            "conv1d: kernel {k} longer than padded input {}",
            l + 2 * padding
        );
        let lout = (l + 2 * padding - k) / stride + 1;
        let xv = &self.node(x).data;
        let wv = &self.node(w).data;
        let mut data = vec![T::zero(); n * cout * lout];
        for b in 0..n {
            for co in 0..cout {
                for o in 0..lout {
                    let mut acc = 0.0f64;
                    for ci in 0..cin {
                        for kk in 0..k {
                            let i = (o * stride + padding) as isize - kk as isize;
                            if i >= 0 && (i as usize) < l {
                                acc += xv[b * cin * l + ci * l + i as usize].to_f64()
                                    * wv[co * cin * k + ci * k + kk].to_f64();
                            }
                        }
                    }
                    data[b * cout * lout + co * lout + o] = T::from_f64(acc);
                }
            }
        }
        let rg = self.needs_grad(&[x, w]);
        self.push(
            vec![n, cout, lout],
            data,
            rg,
            Op::Conv1d { x, w, stride, padding },
        )
    }

    /// Strided transposed convolution (upsampling): `[N, Cin, L]` with
    /// kernels `[Cin, Cout, K]` gives length `(L-1)*stride + K`.
    pub fn transposed_conv1d(&mut self, x: Var, w: Var, stride: usize) -> Var {
        assert!(stride >= 1);
        let xs = self.node(x).shape.clone();
        let ws = self.node(w).shape.clone();
        assert_eq!(xs.len(), 3, "transposed_conv1d: x must be [N, Cin, L], got {xs:?}");
        assert_eq!(ws.len(), 3, "transposed_conv1d: w must be [Cin, Cout, K], got {ws:?}");
        let (n, cin, l) = (xs[0], xs[1], xs[2]);
        let (cin2, cout, k) = (ws[0], ws[1], ws[2]);
        assert_eq!(cin, cin2, "transposed_conv1d: channel mismatch {xs:?} vs {ws:?}");
        let lout = (l - 1) * stride + k;
        let xv = &self.node(x).data;
        let wv = &self.node(w).data;
        let mut acc = vec![0.0f64; n * cout * lout];
        for b in 0..n {
            for ci in 0..cin {
                for i in 0..l {
                    let xval = xv[b * cin * l + ci * l + i].to_f64();
                    for co in 0..cout {
                        for kk in 0..k {
                            acc[b * cout * lout + co * lout + i * stride + kk] +=
                                xval * wv[ci * cout * k + co * k + kk].to_f64();
                        }
                    }
                }
            }
        }
        let data = acc.into_iter().map(T::from_f64).collect();
        let rg = self.needs_grad(&[x, w]);
        self.push(
            vec![n, cout, lout],
            data,
            rg,
            Op::TransposedConv1d { x, w, stride },
        )
    }

    /// Non-overlapping max pooling over the length axis of `[N, C, L]`.
    pub fn max_pool1d(&mut self, x: Var, k: usize) -> Var {
        assert!(k >= 1);
        let xs = self.node(x).shape.clone();
        assert_eq!(xs.len(), 3, "max_pool1d: x must be [N, C, L], got {xs:?}");
        let (n, c, l) = (xs[0], xs[1], xs[2]);
        let lout = l / k;
        let xv = &self.node(x).data;
        let mut data = vec![T::zero(); n * c * lout];
        let mut argmax = vec![0usize; n * c * lout];
        for b in 0..n {
            for ch in 0..c {
                for o in 0..lout {
                    let base = b * c * l + ch * l + o * k;
                    let mut best = base;
                    for i in 1..k {
                        if xv[base + i] > xv[best] {
                            best = base + i;
                        }
                    }
                    data[b * c * lout + ch * lout + o] = xv[best];
                    argmax[b * c * lout + ch * lout + o] = best;
                }
            }
        }
        let rg = self.needs_grad(&[x]);
        let _ = k;
        self.push(vec![n, c, lout], data, rg, Op::MaxPool1d { x, argmax })
    }

    /// Row lookup into an embedding table `[V, D]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Var {
        let ts = self.node(table).shape.clone();
        assert_eq!(ts.len(), 2, "embedding: table must be [V, D], got {ts:?}");
        let (v, d) = (ts[0], ts[1]);
        let tv = &self.node(table).data;
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            assert!(id < v, "embedding: id {id} out of range for table of {v}");
            data.extend_from_slice(&tv[id * d..(id + 1) * d]);
        }
        let rg = self.needs_grad(&[table]);
        self.push(
            vec![ids.len(), d],
            data,
            rg,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
        )
    }

    /// Gather rows of a 2-D value by index (duplicates allowed).
    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Var {
        let xs = self.node(x).shape.clone();
        assert_eq!(xs.len(), 2, "gather_rows: x must be 2-D, got {xs:?}");
        let (r, c) = (xs[0], xs[1]);
        let xv = &self.node(x).data;
        let mut data = Vec::with_capacity(rows.len() * c);
        for &row in rows {
            assert!(row < r, "gather_rows: row {row} out of range for {r}");
            data.extend_from_slice(&xv[row * c..(row + 1) * c]);
        }
        let rg = self.needs_grad(&[x]);
        self.push(
            vec![rows.len(), c],
            data,
            rg,
            Op::GatherRows {
                x,
                rows: rows.to_vec(),
            },
        )
    }

    /// Concatenate `[N, Ci, L]` values along the channel axis.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let first = self.node(parts[0]).shape.clone();
        assert_eq!(first.len(), 3, "concat_channels: parts must be 3-D");
        let (n, l) = (first[0], first[2]);
        let mut c_total = 0;
        for &p in parts {
            let s = &self.node(p).shape;
            assert!(
                s.len() == 3 && s[0] == n && s[2] == l,
                "concat_channels: incompatible shapes {first:?} vs {s:?}"
            );
            c_total += s[1];
        }
        let mut data = vec![T::zero(); n * c_total * l];
        for b in 0..n {
            let mut ch_off = 0;
            for &p in parts {
                let pc = self.node(p).shape[1];
                let pv = &self.node(p).data;
                for ch in 0..pc {
                    let src = b * pc * l + ch * l;
                    let dst = b * c_total * l + (ch_off + ch) * l;
                    data[dst..dst + l].copy_from_slice(&pv[src..src + l]);
                }
                ch_off += pc;
            }
        }
        let rg = self.needs_grad(parts);
        self.push(
            vec![n, c_total, l],
            data,
            rg,
            Op::ConcatChannels(parts.to_vec()),
        )
    }

    /// Stack 2-D values vertically: `[Ri, C] -> [sum(Ri), C]`.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let c = {
            let s = &self.node(parts[0]).shape;
            assert_eq!(s.len(), 2, "concat_rows: parts must be 2-D, got {s:?}");
            s[1]
        };
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let s = &self.node(p).shape;
            assert!(
                s.len() == 2 && s[1] == c,
                "concat_rows: incompatible shapes [.., {c}] vs {s:?}"
            );
            rows += s[0];
            data.extend_from_slice(&self.node(p).data);
        }
        let rg = self.needs_grad(parts);
        self.push(vec![rows, c], data, rg, Op::ConcatRows(parts.to_vec()))
    }

    /// Stack 2-D values horizontally: `[R, Ci] -> [R, sum(Ci)]`.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let r = {
            let s = &self.node(parts[0]).shape;
            assert_eq!(s.len(), 2, "concat_cols: parts must be 2-D, got {s:?}");
            s[0]
        };
        let mut c_total = 0;
        for &p in parts {
            let s = &self.node(p).shape;
            assert!(
                s.len() == 2 && s[0] == r,
                "concat_cols: incompatible shapes [{r}, ..] vs {s:?}"
            );
            c_total += s[1];
        }
        let mut data = vec![T::zero(); r * c_total];
        for i in 0..r {
            let mut off = 0;
            for &p in parts {
                let pc = self.node(p).shape[1];
                let pv = &self.node(p).data;
                data[i * c_total + off..i * c_total + off + pc]
                    .copy_from_slice(&pv[i * pc..(i + 1) * pc]);
                off += pc;
            }
        }
        let rg = self.needs_grad(parts);
        self.push(vec![r, c_total], data, rg, Op::ConcatCols(parts.to_vec()))
    }

    /// Zero-pad the length axis of `[N, C, L]` on the right.
    pub fn pad_length(&mut self, x: Var, right: usize) -> Var {
        let xs = self.node(x).shape.clone();
        assert_eq!(xs.len(), 3, "pad_length: x must be 3-D, got {xs:?}");
        let (n, c, l) = (xs[0], xs[1], xs[2]);
        let lout = l + right;
        let xv = &self.node(x).data;
        let mut data = vec![T::zero(); n * c * lout];
        for b in 0..n {
            for ch in 0..c {
                let src = b * c * l + ch * l;
                let dst = b * c * lout + ch * lout;
                data[dst..dst + l].copy_from_slice(&xv[src..src + l]);
            }
        }
        let rg = self.needs_grad(&[x]);
        self.push(vec![n, c, lout], data, rg, Op::PadLength { x })
    }

    /// Per-token max of feature rows over sample spans (the max-pool variant
    /// of [`Tape::span_means`]).
    pub fn span_max(
        &mut self,
        features: Var,
        spans: &[Option<(usize, usize, usize)>],
    ) -> Var {
        let fs = self.node(features).shape.clone();
        assert_eq!(fs.len(), 3, "span_max: features must be [N, C, L], got {fs:?}");
        let (n, c, l) = (fs[0], fs[1], fs[2]);
        let fv = &self.node(features).data;
        let mut data = vec![T::zero(); spans.len() * c];
        let mut argmax: Vec<Option<Vec<usize>>> = Vec::with_capacity(spans.len());
        for (s, span) in spans.iter().enumerate() {
            if let Some((row, on, off)) = span {
                assert!(*row < n, "span_max: window row {row} out of range {n}");
                assert!(on < off && *off <= l, "span_max: bad span [{on}, {off})");
                let mut arg = Vec::with_capacity(c);
                for ch in 0..c {
                    let base = row * c * l + ch * l;
                    let mut best = base + on;
                    for i in *on + 1..*off {
                        if fv[base + i] > fv[best] {
                            best = base + i;
                        }
                    }
                    data[s * c + ch] = fv[best];
                    arg.push(best);
                }
                argmax.push(Some(arg));
            } else {
                argmax.push(None);
            }
        }
        let rg = self.needs_grad(&[features]);
        self.push(
            vec![spans.len(), c],
            data,
            rg,
            Op::SpanMax { features, argmax },
        )
    }

    /// Contiguous row slice of a 2-D value.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Var {
        let xs = self.node(x).shape.clone();
        assert_eq!(xs.len(), 2, "slice_rows: x must be 2-D, got {xs:?}");
        let (r, c) = (xs[0], xs[1]);
        assert!(start + len <= r, "slice_rows: {start}+{len} exceeds {r} rows");
        let data = self.node(x).data[start * c..(start + len) * c].to_vec();
        let rg = self.needs_grad(&[x]);
        self.push(vec![len, c], data, rg, Op::SliceRows { x, start })
    }

    /// Contiguous column slice of a 2-D value.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let xs = self.node(x).shape.clone();
        assert_eq!(xs.len(), 2, "slice_cols: x must be 2-D, got {xs:?}");
        let (r, c) = (xs[0], xs[1]);
        assert!(start + len <= c, "slice_cols: {start}+{len} exceeds {c} cols");
        let xv = &self.node(x).data;
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&xv[i * c + start..i * c + start + len]);
        }
        let rg = self.needs_grad(&[x]);
        self.push(vec![r, len], data, rg, Op::SliceCols { x, start })
    }

    /// Crop the length axis of `[N, C, L]`.
    pub fn crop_length(&mut self, x: Var, start: usize, len: usize) -> Var {
        let xs = self.node(x).shape.clone();
        assert_eq!(xs.len(), 3, "crop_length: x must be 3-D, got {xs:?}");
        let (n, c, l) = (xs[0], xs[1], xs[2]);
        assert!(start + len <= l, "crop_length: {start}+{len} exceeds {l}");
        let xv = &self.node(x).data;
        let mut data = Vec::with_capacity(n * c * len);
        for b in 0..n {
            for ch in 0..c {
                let base = b * c * l + ch * l + start;
                data.extend_from_slice(&xv[base..base + len]);
            }
        }
        let rg = self.needs_grad(&[x]);
        self.push(vec![n, c, len], data, rg, Op::CropLength { x, start })
    }

    /// Mean over rows: `[R, C] -> [C]`.
    pub fn mean_axis0(&mut self, x: Var) -> Var {
        let xs = self.node(x).shape.clone();
        assert_eq!(xs.len(), 2, "mean_axis0: x must be 2-D, got {xs:?}");
        let (r, c) = (xs[0], xs[1]);
        assert!(r > 0, "mean_axis0: empty input");
        let xv = &self.node(x).data;
        let mut data = vec![T::zero(); c];
        for j in 0..c {
            let mut acc = 0.0f64;
            for i in 0..r {
                acc += xv[i * c + j].to_f64();
            }
            data[j] = T::from_f64(acc / r as f64);
        }
        let rg = self.needs_grad(&[x]);
        self.push(vec![c], data, rg, Op::MeanAxis0(x))
    }

    /// Mean over columns: `[R, C] -> [R]`.
    pub fn mean_axis1(&mut self, x: Var) -> Var {
        let xs = self.node(x).shape.clone();
        assert_eq!(xs.len(), 2, "mean_axis1: x must be 2-D, got {xs:?}");
        let (r, c) = (xs[0], xs[1]);
        assert!(c > 0, "mean_axis1: empty rows");
        let xv = &self.node(x).data;
        let mut data = vec![T::zero(); r];
        for i in 0..r {
            let mut acc = 0.0f64;
            for j in 0..c {
                acc += xv[i * c + j].to_f64();
            }
            data[i] = T::from_f64(acc / c as f64);
        }
        let rg = self.needs_grad(&[x]);
        self.push(vec![r], data, rg, Op::MeanAxis1(x))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let acc: f64 = self.node(x).data.iter().map(|v| v.to_f64()).sum();
        let rg = self.needs_grad(&[x]);
        self.push(vec![1], vec![T::from_f64(acc)], rg, Op::Sum(x))
    }

    /// Mean cross-entropy of `[R, C]` logits against integer targets; rows
    /// with target `-1` are ignored. Returns the scalar loss and the number
    /// of contributing rows (0 yields a loss of exactly 0).
    pub fn cross_entropy(&mut self, logits: Var, targets: &[i32]) -> (Var, usize) {
        let xs = self.node(logits).shape.clone();
        assert_eq!(xs.len(), 2, "cross_entropy: logits must be 2-D, got {xs:?}");
        let (r, c) = (xs[0], xs[1]);
        assert_eq!(
            targets.len(),
            r,
            "cross_entropy: {} targets for {r} rows",
            targets.len()
        );
        let xv = &self.node(logits).data;
        let mut probs = vec![0.0f64; r * c];
        let mut total = 0.0f64;
        let mut count = 0usize;
        for i in 0..r {
            let row = &xv[i * c..(i + 1) * c];
            let max = row
                .iter()
                .fold(f64::NEG_INFINITY, |m, v| m.max(v.to_f64()));
            let mut denom = 0.0f64;
            for (j, v) in row.iter().enumerate() {
                let e = (v.to_f64() - max).exp();
                probs[i * c + j] = e;
                denom += e;
            }
            for j in 0..c {
                probs[i * c + j] /= denom;
            }
            let t = targets[i];
            if t >= 0 {
                assert!(
                    (t as usize) < c,
                    "cross_entropy: target {t} out of range for {c} classes"
                );
                total -= probs[i * c + t as usize].max(1e-300).ln();
                count += 1;
            }
        }
        let loss = if count == 0 { 0.0 } else { total / count as f64 };
        let rg = self.needs_grad(&[logits]);
        let var = self.push(
            vec![1],
            vec![T::from_f64(loss)],
            rg,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
                count,
            },
        );
        (var, count)
    }

    /// Per-token mean of feature rows over sample spans. `features` is
    /// `[N, C, L]`; each span is `(window_row, onset, offset)` and `None`
    /// yields a zero row. Output is `[spans.len(), C]`.
    pub fn span_means(
        &mut self,
        features: Var,
        spans: &[Option<(usize, usize, usize)>],
    ) -> Var {
        let fs = self.node(features).shape.clone();
        assert_eq!(fs.len(), 3, "span_means: features must be [N, C, L], got {fs:?}");
        let (n, c, l) = (fs[0], fs[1], fs[2]);
        let fv = &self.node(features).data;
        let mut data = vec![T::zero(); spans.len() * c];
        for (s, span) in spans.iter().enumerate() {
            if let Some((row, on, off)) = span {
                assert!(*row < n, "span_means: window row {row} out of range {n}");
                assert!(
                    on < off && *off <= l,
                    "span_means: span [{on}, {off}) outside window of {l}"
                );
                let width = (off - on) as f64;
                for ch in 0..c {
                    let mut acc = 0.0f64;
                    for i in *on..*off {
                        acc += fv[row * c * l + ch * l + i].to_f64();
                    }
                    data[s * c + ch] = T::from_f64(acc / width);
                }
            }
        }
        let rg = self.needs_grad(&[features]);
        self.push(
            vec![spans.len(), c],
            data,
            rg,
            Op::SpanMeans {
                features,
                spans: spans.to_vec(),
            },
        )
    }

    /// Reinterpret `[B*L, C]` token rows as `[B, C, L]` for convolution over
    /// the sequence axis.
    pub fn rows_to_conv_layout(&mut self, x: Var, batch: usize) -> Var {
        let xs = self.node(x).shape.clone();
        assert_eq!(xs.len(), 2, "rows_to_conv_layout: x must be 2-D, got {xs:?}");
        let (rows, c) = (xs[0], xs[1]);
        assert!(batch > 0 && rows % batch == 0, "rows_to_conv_layout: {rows} rows not divisible by batch {batch}");
        let l = rows / batch;
        let xv = &self.node(x).data;
        let mut data = vec![T::zero(); rows * c];
        for b in 0..batch {
            for i in 0..l {
                for ch in 0..c {
                    data[b * c * l + ch * l + i] = xv[(b * l + i) * c + ch];
                }
            }
        }
        let rg = self.needs_grad(&[x]);
        self.push(vec![batch, c, l], data, rg, Op::RowsToConvLayout { x, batch })
    }

    /// Mean over unmasked length positions of `[B, C, L]`; rows whose mask is
    /// all zero yield zeros.
    pub fn masked_mean_length(&mut self, x: Var, mask: &[Vec<u8>]) -> Var {
        let xs = self.node(x).shape.clone();
        assert_eq!(xs.len(), 3, "masked_mean_length: x must be 3-D, got {xs:?}");
        let (n, c, l) = (xs[0], xs[1], xs[2]);
        assert_eq!(mask.len(), n, "masked_mean_length: mask batch mismatch");
        assert!(mask.iter().all(|m| m.len() == l), "masked_mean_length: mask length mismatch");
        let xv = &self.node(x).data;
        let mut data = vec![T::zero(); n * c];
        for b in 0..n {
            let count = mask[b].iter().filter(|&&m| m != 0).count();
            if count == 0 {
                continue;
            }
            for ch in 0..c {
                let mut acc = 0.0f64;
                for i in 0..l {
                    if mask[b][i] != 0 {
                        acc += xv[b * c * l + ch * l + i].to_f64();
                    }
                }
                data[b * c + ch] = T::from_f64(acc / count as f64);
            }
        }
        let rg = self.needs_grad(&[x]);
        self.push(
            vec![n, c],
            data,
            rg,
            Op::MaskedMeanLength {
                x,
                mask: mask.to_vec(),
            },
        )
    }

    /// Inverted dropout; identity when `p == 0` or not training.
    pub fn dropout(&mut self, x: Var, p: f64, train: bool, rng: &mut impl Rng) -> Var {
        assert!((0.0..1.0).contains(&p), "dropout: p must be in [0, 1)");
        if !train || p == 0.0 {
            return x;
        }
        let keep: Vec<bool> = (0..self.node(x).data.len())
            .map(|_| rng.gen::<f64>() >= p)
            .collect();
        let scale = 1.0 / (1.0 - p);
        let data = self
            .node(x)
            .data
            .iter()
            .zip(&keep)
            .map(|(&v, &k)| if k { v * T::from_f64(scale) } else { T::zero() })
            .collect();
        let rg = self.needs_grad(&[x]);
        let shape = self.node(x).shape.clone();
        self.push(shape, data, rg, Op::Dropout { x, keep, scale })
    }

    /// Same data, new shape (element count must match).
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        assert_eq!(
            numel(&self.node(x).shape),
            numel(shape),
            "reshape: cannot view {:?} as {shape:?}",
            self.node(x).shape
        );
        let data = self.node(x).data.clone();
        let rg = self.needs_grad(&[x]);
        self.push(shape.to_vec(), data, rg, Op::Reshape(x))
    }
}

fn gelu_f(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4;
    let u = C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let sech2 = 1.0 - t * t;
    0.5 * (1.0 + t) + 0.5 * x * sech2 * C * (1.0 + 3.0 * 0.044715 * x * x)
}

impl<T: Real> Tape<T> {
    pub(super) fn backprop_node(
        &self,
        id: usize,
        g: &[T],
        grads: &mut Vec<Option<Vec<T>>>,
    ) {
        let node = &self.nodes[id];
        let mut add_to = |v: Var, f: &mut dyn FnMut(&mut [T])| {
            if self.nodes[v.0].requires_grad {
                let len = self.nodes[v.0].data.len();
                accumulate(&mut grads[v.0], len, |buf| f(buf));
            }
        };
        match &node.op {
            Op::Leaf { .. } => {}
            Op::Add(a, b) => {
                add_to(*a, &mut |buf| {
                    for (o, &gi) in buf.iter_mut().zip(g) {
                        *o += gi;
                    }
                });
                add_to(*b, &mut |buf| {
                    for (o, &gi) in buf.iter_mut().zip(g) {
                        *o += gi;
                    }
                });
            }
            Op::AddBiasRow(x, bias) => {
                let c = self.nodes[bias.0].data.len();
                add_to(*x, &mut |buf| {
                    for (o, &gi) in buf.iter_mut().zip(g) {
                        *o += gi;
                    }
                });
                add_to(*bias, &mut |buf| {
                    let mut acc = vec![0.0f64; c];
                    for (i, &gi) in g.iter().enumerate() {
                        acc[i % c] += gi.to_f64();
                    }
                    for (o, a) in buf.iter_mut().zip(acc) {
                        *o += T::from_f64(a);
                    }
                });
            }
            Op::AddBiasChannel(x, bias) => {
                let shape = &node.shape;
                let (c, l) = (shape[1], shape[2]);
                add_to(*x, &mut |buf| {
                    for (o, &gi) in buf.iter_mut().zip(g) {
                        *o += gi;
                    }
                });
                add_to(*bias, &mut |buf| {
                    let mut acc = vec![0.0f64; c];
                    for (i, &gi) in g.iter().enumerate() {
                        acc[(i / l) % c] += gi.to_f64();
                    }
                    for (o, a) in buf.iter_mut().zip(acc) {
                        *o += T::from_f64(a);
                    }
                });
            }
            Op::Mul(a, b) => {
                let av = &self.nodes[a.0].data;
                let bv = &self.nodes[b.0].data;
                add_to(*a, &mut |buf| {
                    for i in 0..g.len() {
                        buf[i] += g[i] * bv[i];
                    }
                });
                add_to(*b, &mut |buf| {
                    for i in 0..g.len() {
                        buf[i] += g[i] * av[i];
                    }
                });
            }
            Op::Scale(x, c) => {
                let c = T::from_f64(*c);
                add_to(*x, &mut |buf| {
                    for i in 0..g.len() {
                        buf[i] += g[i] * c;
                    }
                });
            }
            Op::AddRowConst(x) => {
                add_to(*x, &mut |buf| {
                    for (o, &gi) in buf.iter_mut().zip(g) {
                        *o += gi;
                    }
                });
            }
            Op::Matmul(a, b) => {
                let (m, k) = (self.nodes[a.0].shape[0], self.nodes[a.0].shape[1]);
                let n = self.nodes[b.0].shape[1];
                let av = &self.nodes[a.0].data;
                let bv = &self.nodes[b.0].data;
                add_to(*a, &mut |buf| {
                    for i in 0..m {
                        for p in 0..k {
                            let mut acc = 0.0f64;
                            for j in 0..n {
                                acc += g[i * n + j].to_f64() * bv[p * n + j].to_f64();
                            }
                            buf[i * k + p] += T::from_f64(acc);
                        }
                    }
                });
                add_to(*b, &mut |buf| {
                    for p in 0..k {
                        for j in 0..n {
                            let mut acc = 0.0f64;
                            for i in 0..m {
                                acc += av[i * k + p].to_f64() * g[i * n + j].to_f64();
                            }
                            buf[p * n + j] += T::from_f64(acc);
                        }
                    }
                });
            }
            Op::Transpose2d(x) => {
                let (n, m) = (node.shape[0], node.shape[1]); // out is [N, M]
                add_to(*x, &mut |buf| {
                    for i in 0..n {
                        for j in 0..m {
                            buf[j * n + i] += g[i * m + j];
                        }
                    }
                });
            }
            Op::Relu(x) => {
                let xv = &self.nodes[x.0].data;
                add_to(*x, &mut |buf| {
                    for i in 0..g.len() {
                        if xv[i] > T::zero() {
                            buf[i] += g[i];
                        }
                    }
                });
            }
            Op::Gelu(x) => {
                let xv = &self.nodes[x.0].data;
                add_to(*x, &mut |buf| {
                    for i in 0..g.len() {
                        buf[i] += T::from_f64(g[i].to_f64() * gelu_grad(xv[i].to_f64()));
                    }
                });
            }
            Op::Softmax(x) => {
                let (r, c) = (node.shape[0], node.shape[1]);
                let y = &node.data;
                add_to(*x, &mut |buf| {
                    for i in 0..r {
                        let mut dot = 0.0f64;
                        for j in 0..c {
                            dot += g[i * c + j].to_f64() * y[i * c + j].to_f64();
                        }
                        for j in 0..c {
                            let yij = y[i * c + j].to_f64();
                            buf[i * c + j] +=
                                T::from_f64(yij * (g[i * c + j].to_f64() - dot));
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                cache,
            } => {
                let (r, c) = (node.shape[0], node.shape[1]);
                let xv = &self.nodes[x.0].data;
                let gv = &self.nodes[gamma.0].data;
                add_to(*x, &mut |buf| {
                    for i in 0..r {
                        let (mean, inv) = cache[i];
                        let mut sum_gh = 0.0f64;
                        let mut sum_gh_xhat = 0.0f64;
                        let mut xhat = vec![0.0f64; c];
                        for j in 0..c {
                            xhat[j] = (xv[i * c + j].to_f64() - mean) * inv;
                            let gh = g[i * c + j].to_f64() * gv[j].to_f64();
                            sum_gh += gh;
                            sum_gh_xhat += gh * xhat[j];
                        }
                        let nf = c as f64;
                        for j in 0..c {
                            let gh = g[i * c + j].to_f64() * gv[j].to_f64();
                            buf[i * c + j] += T::from_f64(
                                inv * (gh - sum_gh / nf - xhat[j] * sum_gh_xhat / nf),
                            );
                        }
                    }
                });
                add_to(*gamma, &mut |buf| {
                    for j in 0..c {
                        let mut acc = 0.0f64;
                        for i in 0..r {
                            let (mean, inv) = cache[i];
                            let xhat = (xv[i * c + j].to_f64() - mean) * inv;
                            acc += g[i * c + j].to_f64() * xhat;
                        }
                        buf[j] += T::from_f64(acc);
                    }
                });
                add_to(*beta, &mut |buf| {
                    for j in 0..c {
                        let mut acc = 0.0f64;
                        for i in 0..r {
                            acc += g[i * c + j].to_f64();
                        }
                        buf[j] += T::from_f64(acc);
                    }
                });
            }
            Op::BatchNorm1d {
                x,
                gamma,
                beta,
                eps,
                stats,
                train_count,
            } => {
                let (n, c, l) = (node.shape[0], node.shape[1], node.shape[2]);
                let xv = &self.nodes[x.0].data;
                let gv = &self.nodes[gamma.0].data;
                add_to(*x, &mut |buf| {
                    for ch in 0..c {
                        let (mean, var) = stats[ch];
                        let inv = 1.0 / (var + eps).sqrt();
                        let gam = gv[ch].to_f64();
                        if *train_count == 0 {
                            // Eval mode: statistics are constants.
                            for b in 0..n {
                                for i in 0..l {
                                    let idx = b * c * l + ch * l + i;
                                    buf[idx] += T::from_f64(g[idx].to_f64() * gam * inv);
                                }
                            }
                        } else {
                            let m = *train_count as f64;
                            let mut sum_g = 0.0f64;
                            let mut sum_g_xhat = 0.0f64;
                            for b in 0..n {
                                for i in 0..l {
                                    let idx = b * c * l + ch * l + i;
                                    let xhat = (xv[idx].to_f64() - mean) * inv;
                                    sum_g += g[idx].to_f64();
                                    sum_g_xhat += g[idx].to_f64() * xhat;
                                }
                            }
                            for b in 0..n {
                                for i in 0..l {
                                    let idx = b * c * l + ch * l + i;
                                    let xhat = (xv[idx].to_f64() - mean) * inv;
                                    buf[idx] += T::from_f64(
                                        gam * inv / m
                                            * (m * g[idx].to_f64()
                                                - sum_g
                                                - xhat * sum_g_xhat),
                                    );
                                }
                            }
                        }
                    }
                });
                add_to(*gamma, &mut |buf| {
                    for ch in 0..c {
                        let (mean, var) = stats[ch];
                        let inv = 1.0 / (var + eps).sqrt();
                        let mut acc = 0.0f64;
                        for b in 0..n {
                            for i in 0..l {
                                let idx = b * c * l + ch * l + i;
                                acc += g[idx].to_f64() * (xv[idx].to_f64() - mean) * inv;
                            }
                        }
                        buf[ch] += T::from_f64(acc);
                    }
                });
                add_to(*beta, &mut |buf| {
                    for ch in 0..c {
                        let mut acc = 0.0f64;
                        for b in 0..n {
                            for i in 0..l {
                                acc += g[b * c * l + ch * l + i].to_f64();
                            }
                        }
                        buf[ch] += T::from_f64(acc);
                    }
                });
            }
            Op::Conv1d {
                x,
                w,
                stride,
                padding,
            } => {
                let (n, cout, lout) = (node.shape[0], node.shape[1], node.shape[2]);
                let (cin, l) = (self.nodes[x.0].shape[1], self.nodes[x.0].shape[2]);
                let k = self.nodes[w.0].shape[2];
                let xv = &self.nodes[x.0].data;
                let wv = &self.nodes[w.0].data;
                add_to(*x, &mut |buf| {
                    let mut acc = vec![0.0f64; buf.len()];
                    for b in 0..n {
                        for co in 0..cout {
                            for o in 0..lout {
                                let go = g[b * cout * lout + co * lout + o].to_f64();
                                if go == 0.0 {
                                    continue;
                                }
                                for ci in 0..cin {
                                    for kk in 0..k {
                                        let i = (o * stride + padding) as isize - kk as isize;
                                        if i >= 0 && (i as usize) < l {
                                            acc[b * cin * l + ci * l + i as usize] +=
                                                go * wv[co * cin * k + ci * k + kk].to_f64();
                                        }
                                    }
                                }
                            }
                        }
                    }
                    for (o, a) in buf.iter_mut().zip(acc) {
                        *o += T::from_f64(a);
                    }
                });
                add_to(*w, &mut |buf| {
                    let mut acc = vec![0.0f64; buf.len()];
                    for b in 0..n {
                        for co in 0..cout {
                            for o in 0..lout {
                                let go = g[b * cout * lout + co * lout + o].to_f64();
                                if go == 0.0 {
                                    continue;
                                }
                                for ci in 0..cin {
                                    for kk in 0..k {
                                        let i = (o * stride + padding) as isize - kk as isize;
                                        if i >= 0 && (i as usize) < l {
                                            acc[co * cin * k + ci * k + kk] +=
                                                go * xv[b * cin * l + ci * l + i as usize].to_f64();
                                        }
                                    }
                                }
                            }
                        }
                    }
                    for (o, a) in buf.iter_mut().zip(acc) {
                        *o += T::from_f64(a);
                    }
                });
            }
            Op::TransposedConv1d { x, w, stride } => {
                let (n, cout, _lout) = (node.shape[0], node.shape[1], node.shape[2]);
                let (cin, l) = (self.nodes[x.0].shape[1], self.nodes[x.0].shape[2]);
                let k = self.nodes[w.0].shape[2];
                let lout = node.shape[2];
                let xv = &self.nodes[x.0].data;
                let wv = &self.nodes[w.0].data;
                add_to(*x, &mut |buf| {
                    let mut acc = vec![0.0f64; buf.len()];
                    for b in 0..n {
                        for ci in 0..cin {
                            for i in 0..l {
                                let mut s = 0.0f64;
                                for co in 0..cout {
                                    for kk in 0..k {
                                        s += g[b * cout * lout + co * lout + i * stride + kk]
                                            .to_f64()
                                            * wv[ci * cout * k + co * k + kk].to_f64();
                                    }
                                }
                                acc[b * cin * l + ci * l + i] += s;
                            }
                        }
                    }
                    for (o, a) in buf.iter_mut().zip(acc) {
                        *o += T::from_f64(a);
                    }
                });
                add_to(*w, &mut |buf| {
                    let mut acc = vec![0.0f64; buf.len()];
                    for b in 0..n {
                        for ci in 0..cin {
                            for i in 0..l {
                                let xval = xv[b * cin * l + ci * l + i].to_f64();
                                if xval == 0.0 {
                                    continue;
                                }
                                for co in 0..cout {
                                    for kk in 0..k {
                                        acc[ci * cout * k + co * k + kk] += xval
                                            * g[b * cout * lout + co * lout + i * stride + kk]
                                                .to_f64();
                                    }
                                }
                            }
                        }
                    }
                    for (o, a) in buf.iter_mut().zip(acc) {
                        *o += T::from_f64(a);
                    }
                });
            }
            Op::MaxPool1d { x, argmax } => {
                add_to(*x, &mut |buf| {
                    for (o, &src) in argmax.iter().enumerate() {
                        buf[src] += g[o];
                    }
                });
            }
            Op::Embedding { table, ids } => {
                let d = node.shape[1];
                add_to(*table, &mut |buf| {
                    for (i, &id) in ids.iter().enumerate() {
                        for j in 0..d {
                            buf[id * d + j] += g[i * d + j];
                        }
                    }
                });
            }
            Op::GatherRows { x, rows } => {
                let c = node.shape[1];
                add_to(*x, &mut |buf| {
                    for (i, &row) in rows.iter().enumerate() {
                        for j in 0..c {
                            buf[row * c + j] += g[i * c + j];
                        }
                    }
                });
            }
            Op::ConcatChannels(parts) => {
                let (n, c_total, l) = (node.shape[0], node.shape[1], node.shape[2]);
                let mut ch_off = 0usize;
                for &p in parts {
                    let pc = self.nodes[p.0].shape[1];
                    let start = ch_off;
                    add_to(p, &mut |buf| {
                        for b in 0..n {
                            for ch in 0..pc {
                                let src = b * c_total * l + (start + ch) * l;
                                let dst = b * pc * l + ch * l;
                                for i in 0..l {
                                    buf[dst + i] += g[src + i];
                                }
                            }
                        }
                    });
                    ch_off += pc;
                }
            }
            Op::ConcatRows(parts) => {
                let c = node.shape[1];
                let mut row_off = 0usize;
                for &p in parts {
                    let pr = self.nodes[p.0].shape[0];
                    let start = row_off;
                    add_to(p, &mut |buf| {
                        for i in 0..pr * c {
                            buf[i] += g[start * c + i];
                        }
                    });
                    row_off += pr;
                }
            }
            Op::ConcatCols(parts) => {
                let (r, c_total) = (node.shape[0], node.shape[1]);
                let mut col_off = 0usize;
                for &p in parts {
                    let pc = self.nodes[p.0].shape[1];
                    let start = col_off;
                    add_to(p, &mut |buf| {
                        for i in 0..r {
                            for j in 0..pc {
                                buf[i * pc + j] += g[i * c_total + start + j];
                            }
                        }
                    });
                    col_off += pc;
                }
            }
            Op::PadLength { x } => {
                let (n, c, lout) = (node.shape[0], node.shape[1], node.shape[2]);
                let l = self.nodes[x.0].shape[2];
                add_to(*x, &mut |buf| {
                    for b in 0..n {
                        for ch in 0..c {
                            for i in 0..l {
                                buf[b * c * l + ch * l + i] += g[b * c * lout + ch * lout + i];
                            }
                        }
                    }
                });
            }
            Op::SpanMax { features, argmax } => {
                let c = node.shape[1];
                add_to(*features, &mut |buf| {
                    for (s, arg) in argmax.iter().enumerate() {
                        if let Some(arg) = arg {
                            for ch in 0..c {
                                buf[arg[ch]] += g[s * c + ch];
                            }
                        }
                    }
                });
            }
            Op::SliceRows { x, start } => {
                let (len, c) = (node.shape[0], node.shape[1]);
                add_to(*x, &mut |buf| {
                    for i in 0..len * c {
                        buf[start * c + i] += g[i];
                    }
                });
            }
            Op::SliceCols { x, start } => {
                let (r, len) = (node.shape[0], node.shape[1]);
                let c = self.nodes[x.0].shape[1];
                add_to(*x, &mut |buf| {
                    for i in 0..r {
                        for j in 0..len {
                            buf[i * c + start + j] += g[i * len + j];
                        }
                    }
                });
            }
            Op::CropLength { x, start } => {
                let (n, c, len) = (node.shape[0], node.shape[1], node.shape[2]);
                let l = self.nodes[x.0].shape[2];
                add_to(*x, &mut |buf| {
                    for b in 0..n {
                        for ch in 0..c {
                            for i in 0..len {
                                buf[b * c * l + ch * l + start + i] +=
                                    g[b * c * len + ch * len + i];
                            }
                        }
                    }
                });
            }
            Op::MeanAxis0(x) => {
                let (r, c) = (self.nodes[x.0].shape[0], self.nodes[x.0].shape[1]);
                let scale = T::from_f64(1.0 / r as f64);
                add_to(*x, &mut |buf| {
                    for i in 0..r {
                        for j in 0..c {
                            buf[i * c + j] += g[j] * scale;
                        }
                    }
                });
            }
            Op::MeanAxis1(x) => {
                let (r, c) = (self.nodes[x.0].shape[0], self.nodes[x.0].shape[1]);
                let scale = T::from_f64(1.0 / c as f64);
                add_to(*x, &mut |buf| {
                    for i in 0..r {
                        for j in 0..c {
                            buf[i * c + j] += g[i] * scale;
                        }
                    }
                });
            }
            Op::Sum(x) => {
                let gs = g[0];
                add_to(*x, &mut |buf| {
                    for o in buf.iter_mut() {
                        *o += gs;
                    }
                });
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
                count,
            } => {
                if *count == 0 {
                    return;
                }
                let c = self.nodes[logits.0].shape[1];
                let gs = g[0].to_f64() / *count as f64;
                add_to(*logits, &mut |buf| {
                    for (i, &t) in targets.iter().enumerate() {
                        if t < 0 {
                            continue;
                        }
                        for j in 0..c {
                            let indicator = if j == t as usize { 1.0 } else { 0.0 };
                            buf[i * c + j] +=
                                T::from_f64(gs * (probs[i * c + j] - indicator));
                        }
                    }
                });
            }
            Op::SpanMeans { features, spans } => {
                let c = node.shape[1];
                let l = self.nodes[features.0].shape[2];
                add_to(*features, &mut |buf| {
                    for (s, span) in spans.iter().enumerate() {
                        if let Some((row, on, off)) = span {
                            let scale = T::from_f64(1.0 / (off - on) as f64);
                            for ch in 0..c {
                                let gi = g[s * c + ch] * scale;
                                for i in *on..*off {
                                    buf[row * c * l + ch * l + i] += gi;
                                }
                            }
                        }
                    }
                });
            }
            Op::RowsToConvLayout { x, batch } => {
                let (c, l) = (node.shape[1], node.shape[2]);
                add_to(*x, &mut |buf| {
                    for b in 0..*batch {
                        for i in 0..l {
                            for ch in 0..c {
                                buf[(b * l + i) * c + ch] += g[b * c * l + ch * l + i];
                            }
                        }
                    }
                });
            }
            Op::MaskedMeanLength { x, mask } => {
                let (n, c) = (node.shape[0], node.shape[1]);
                let l = self.nodes[x.0].shape[2];
                add_to(*x, &mut |buf| {
                    for b in 0..n {
                        let count = mask[b].iter().filter(|&&m| m != 0).count();
                        if count == 0 {
                            continue;
                        }
                        let scale = T::from_f64(1.0 / count as f64);
                        for ch in 0..c {
                            let gi = g[b * c + ch] * scale;
                            for i in 0..l {
                                if mask[b][i] != 0 {
                                    buf[b * c * l + ch * l + i] += gi;
                                }
                            }
                        }
                    }
                });
            }
            Op::Dropout { x, keep, scale } => {
                let s = T::from_f64(*scale);
                add_to(*x, &mut |buf| {
                    for i in 0..g.len() {
                        if keep[i] {
                            buf[i] += g[i] * s;
                        }
                    }
                });
            }
            Op::Reshape(x) => {
                add_to(*x, &mut |buf| {
                    for (o, &gi) in buf.iter_mut().zip(g) {
                        *o += gi;
                    }
                });
            }
        }
    }
}
