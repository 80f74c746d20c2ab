//! Input embeddings (token + position + U-Net CNN), transformer encoder,
//! masked-wave head, and task heads.
//!
//! All forward passes build on a [`Tape`] and a named [`ParamStore`], so the
//! same code path serves f32 training and f64 gradient checks. Token rows
//! are processed flattened as `[batch * seq, d_model]`; attention runs per
//! sentence and head on row/column slices.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta, LoadedCheckpoint};

use crate::autograd::{AdamState, Init, ParamStore, Real, Tape, Var};
use crate::sentences::MaskedBatch;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// Classification reads the CLS position.
    #[default]
    Cls,
    /// Classification reads the mean over non-PAD positions.
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CnnPool {
    /// Token CNN embedding = mean of feature rows over the wave span.
    #[default]
    Mean,
    /// Max over the wave span instead.
    Max,
}

/// Task-head shapes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    DenseBinary,
    DenseMulticlass,
    ResidualMulticlass,
}

impl HeadKind {
    pub fn label(&self) -> &'static str {
        match self {
            HeadKind::DenseBinary => "dense_binary",
            HeadKind::DenseMulticlass => "dense_multiclass",
            HeadKind::ResidualMulticlass => "residual_multiclass",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_seq_len: usize,
    /// Wave tokens plus the four specials.
    pub vocab_size: usize,
    pub dropout: f64,
    /// Encoder channel widths of the two U-Net blocks.
    pub unet_channels: (usize, usize),
    pub window_samples: usize,
    pub pooling: Pooling,
    pub cnn_pool: CnnPool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 128,
            n_layers: 4,
            n_heads: 4,
            d_ff: 512,
            max_seq_len: 128,
            vocab_size: 74,
            dropout: 0.1,
            unet_channels: (16, 32),
            window_samples: 2500,
            pooling: Pooling::Cls,
            cnn_pool: CnnPool::Mean,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> crate::Result<()> {
        if self.d_model == 0 || self.d_model % self.n_heads != 0 {
            return Err(crate::Error::Config(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.vocab_size < 5 {
            return Err(crate::Error::Config(
                "vocab_size must cover at least one wave token plus 4 specials".into(),
            ));
        }
        Ok(())
    }

    pub fn n_wave_tokens(&self) -> usize {
        self.vocab_size - 4
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

/// Dropout/batch-norm behavior switch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

const BN_EPS: f64 = 1e-5;
const LN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;
const NEG_INF: f64 = -1e9;

/// Create every backbone parameter (U-Net, embeddings, encoder, MLM head)
/// with BERT-style initialization; deterministic given the seed.
pub fn init_params<T: Real>(cfg: &ModelConfig, seed: u64) -> ParamStore<T> {
    cfg.validate().expect("invalid model config");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let d = cfg.d_model;
    let (c1, c2) = cfg.unet_channels;
    let sd = 0.02;

    store.add("tok_emb", &[cfg.vocab_size, d], Init::Normal(sd), true, &mut rng);
    store.add("pos_emb", &[cfg.max_seq_len, d], Init::Normal(sd), true, &mut rng);

    let conv = |store: &mut ParamStore<T>, rng: &mut ChaCha8Rng, name: &str, shape: &[usize]| {
        store.add(format!("{name}.w"), shape, Init::Normal(sd), true, rng);
        store.add(format!("{name}.b"), &[shape[0]], Init::Zeros, true, rng);
    };
    let bn = |store: &mut ParamStore<T>, rng: &mut ChaCha8Rng, name: &str, c: usize| {
        store.add(format!("{name}.gamma"), &[c], Init::Ones, true, rng);
        store.add(format!("{name}.beta"), &[c], Init::Zeros, true, rng);
        store.add(format!("{name}.mean"), &[c], Init::Zeros, false, rng);
        store.add(format!("{name}.var"), &[c], Init::Ones, false, rng);
    };

    conv(&mut store, &mut rng, "unet.enc1", &[c1, 1, 7]);
    bn(&mut store, &mut rng, "unet.bn_e1", c1);
    conv(&mut store, &mut rng, "unet.enc2", &[c2, c1, 7]);
    bn(&mut store, &mut rng, "unet.bn_e2", c2);
    // Transposed kernels are stored [Cin, Cout, K].
    store.add("unet.up1.w", &[c2, c2, 2], Init::Normal(sd), true, &mut rng);
    conv(&mut store, &mut rng, "unet.dec1", &[c2, 2 * c2, 7]);
    bn(&mut store, &mut rng, "unet.bn_d1", c2);
    store.add("unet.up2.w", &[c2, c1, 2], Init::Normal(sd), true, &mut rng);
    conv(&mut store, &mut rng, "unet.dec2", &[c1, 2 * c1, 7]);
    bn(&mut store, &mut rng, "unet.bn_d2", c1);
    conv(&mut store, &mut rng, "unet.out", &[d, c1, 1]);

    let linear = |store: &mut ParamStore<T>, rng: &mut ChaCha8Rng, name: &str, rows: usize, cols: usize| {
        store.add(format!("{name}.w"), &[rows, cols], Init::Normal(sd), true, rng);
        store.add(format!("{name}.b"), &[cols], Init::Zeros, true, rng);
    };
    let norm = |store: &mut ParamStore<T>, rng: &mut ChaCha8Rng, name: &str, d: usize| {
        store.add(format!("{name}.gamma"), &[d], Init::Ones, true, rng);
        store.add(format!("{name}.beta"), &[d], Init::Zeros, true, rng);
    };
    for i in 0..cfg.n_layers {
        for proj in ["wq", "wk", "wv", "wo"] {
            linear(&mut store, &mut rng, &format!("layer{i}.attn.{proj}"), d, d);
        }
        norm(&mut store, &mut rng, &format!("layer{i}.ln1"), d);
        linear(&mut store, &mut rng, &format!("layer{i}.ffn.fc1"), d, cfg.d_ff);
        linear(&mut store, &mut rng, &format!("layer{i}.ffn.fc2"), cfg.d_ff, d);
        norm(&mut store, &mut rng, &format!("layer{i}.ln2"), d);
    }
    linear(&mut store, &mut rng, "mlm", d, cfg.n_wave_tokens());
    store
}

/// Append task-head parameters for fine-tuning.
pub fn add_head_params<T: Real>(
    store: &mut ParamStore<T>,
    kind: HeadKind,
    n_classes: usize,
    cfg: &ModelConfig,
    seed: u64,
) {
    assert!(n_classes >= 2, "a task head needs at least 2 classes");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = cfg.d_model;
    let sd = 0.02;
    match kind {
        HeadKind::DenseBinary | HeadKind::DenseMulticlass => {
            store.add("head.fc1.w", &[d, d], Init::Normal(sd), true, &mut rng);
            store.add("head.fc1.b", &[d], Init::Zeros, true, &mut rng);
            store.add("head.fc2.w", &[d, n_classes], Init::Normal(sd), true, &mut rng);
            store.add("head.fc2.b", &[n_classes], Init::Zeros, true, &mut rng);
        }
        HeadKind::ResidualMulticlass => {
            for i in 0..2 {
                store.add(format!("head.block{i}.w"), &[d, d, 3], Init::Normal(sd), true, &mut rng);
                store.add(format!("head.block{i}.b"), &[d], Init::Zeros, true, &mut rng);
                store.add(format!("head.bn{i}.gamma"), &[d], Init::Ones, true, &mut rng);
                store.add(format!("head.bn{i}.beta"), &[d], Init::Zeros, true, &mut rng);
                store.add(format!("head.bn{i}.mean"), &[d], Init::Zeros, false, &mut rng);
                store.add(format!("head.bn{i}.var"), &[d], Init::Ones, false, &mut rng);
            }
            store.add("head.out.w", &[d, n_classes], Init::Normal(sd), true, &mut rng);
            store.add("head.out.b", &[n_classes], Init::Zeros, true, &mut rng);
        }
    }
}

/// Batch-norm wrapper: train mode computes batch statistics (recorded for
/// the running-average update), eval mode normalizes with the stored ones.
fn batch_norm<T: Real>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    x: Var,
    name: &str,
    mode: Mode,
    bn_nodes: &mut Vec<(String, Var)>,
) -> Var {
    let gamma = tape.by_name(store, &format!("{name}.gamma"));
    let beta = tape.by_name(store, &format!("{name}.beta"));
    match mode {
        Mode::Train => {
            let out = tape.batch_norm1d(x, gamma, beta, BN_EPS, None);
            bn_nodes.push((name.to_string(), out));
            out
        }
        Mode::Eval => {
            let means: Vec<f64> = store
                .get(&format!("{name}.mean"))
                .value
                .iter()
                .map(|v| v.to_f64())
                .collect();
            let vars: Vec<f64> = store
                .get(&format!("{name}.var"))
                .value
                .iter()
                .map(|v| v.to_f64())
                .collect();
            tape.batch_norm1d(x, gamma, beta, BN_EPS, Some((&means, &vars)))
        }
    }
}

/// Fold the batch statistics recorded during a train-mode forward pass into
/// the running mean/variance buffers.
pub fn update_running_stats<T: Real>(
    tape: &Tape<T>,
    store: &mut ParamStore<T>,
    bn_nodes: &[(String, Var)],
) {
    for (name, var) in bn_nodes {
        let Some(stats) = tape.batch_norm_stats(*var) else { continue };
        let stats = stats.to_vec();
        let mean = store.get_mut(&format!("{name}.mean"));
        for (m, (batch_mean, _)) in mean.value.iter_mut().zip(&stats) {
            *m = T::from_f64(m.to_f64() * (1.0 - BN_MOMENTUM) + batch_mean * BN_MOMENTUM);
        }
        let var_buf = store.get_mut(&format!("{name}.var"));
        for (v, (_, batch_var)) in var_buf.value.iter_mut().zip(&stats) {
            *v = T::from_f64(v.to_f64() * (1.0 - BN_MOMENTUM) + batch_var * BN_MOMENTUM);
        }
    }
}

/// U-Net over raw windows `[N, 1, S]`: two downsampling blocks, two
/// upsampling blocks with skip connections, and a 1x1 projection to
/// `d_model` channels. Output length always equals the input length.
pub fn unet_features<T: Real>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    raw: Var,
    cfg: &ModelConfig,
    mode: Mode,
    bn_nodes: &mut Vec<(String, Var)>,
) -> Var {
    let shape = tape.shape(raw).to_vec();
    assert_eq!(shape.len(), 3, "unet_features: raw must be [N, 1, S]");
    debug_assert_eq!(shape[2], cfg.window_samples);
    let s_in = shape[2];
    let pad = (4 - s_in % 4) % 4;
    let x = if pad > 0 { tape.pad_length(raw, pad) } else { raw };

    let conv_block = |tape: &mut Tape<T>, bn_nodes: &mut Vec<(String, Var)>, x: Var, conv: &str, bn_name: &str, padding: usize| {
        let w = tape.by_name(store, &format!("{conv}.w"));
        let b = tape.by_name(store, &format!("{conv}.b"));
        let y = tape.conv1d(x, w, 1, padding);
        let y = tape.add_bias_channel(y, b);
        let y = batch_norm(tape, store, y, bn_name, mode, bn_nodes);
        tape.relu(y)
    };

    let e1 = conv_block(tape, bn_nodes, x, "unet.enc1", "unet.bn_e1", 3);
    let p1 = tape.max_pool1d(e1, 2);
    let e2 = conv_block(tape, bn_nodes, p1, "unet.enc2", "unet.bn_e2", 3);
    let p2 = tape.max_pool1d(e2, 2);

    let up1_w = tape.by_name(store, "unet.up1.w");
    let u1 = tape.transposed_conv1d(p2, up1_w, 2);
    let cat1 = tape.concat_channels(&[u1, e2]);
    let d1 = conv_block(tape, bn_nodes, cat1, "unet.dec1", "unet.bn_d1", 3);

    let up2_w = tape.by_name(store, "unet.up2.w");
    let u2 = tape.transposed_conv1d(d1, up2_w, 2);
    let cat2 = tape.concat_channels(&[u2, e1]);
    let d2 = conv_block(tape, bn_nodes, cat2, "unet.dec2", "unet.bn_d2", 3);

    let out_w = tape.by_name(store, "unet.out.w");
    let out_b = tape.by_name(store, "unet.out.b");
    let out = tape.conv1d(d2, out_w, 1, 0);
    let out = tape.add_bias_channel(out, out_b);
    if pad > 0 {
        tape.crop_length(out, 0, s_in)
    } else {
        out
    }
}

/// Everything the embedding stage needs to know about one batch.
pub struct EmbedInputs<'a> {
    pub batch: &'a MaskedBatch,
    /// Raw samples per referenced window id.
    pub windows: &'a dyn Fn(usize) -> &'a [f64],
    /// Zero the CNN span of masked positions.
    pub mask_cnn_too: bool,
}

/// Token + positional + CNN embeddings, summed, as `[B*L, d_model]`.
/// Also returns the per-batch list of train-mode batch-norm nodes.
pub fn embed<T: Real>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    inputs: &EmbedInputs,
    cfg: &ModelConfig,
    mode: Mode,
    rng: &mut ChaCha8Rng,
    bn_nodes: &mut Vec<(String, Var)>,
) -> Var {
    let batch = inputs.batch;
    let b = batch.batch_size();
    let l = batch.seq_len;
    assert!(l <= cfg.max_seq_len, "sequence {l} exceeds max_seq_len {}", cfg.max_seq_len);

    // Unique windows of this batch, each run through the U-Net once.
    let mut unique: Vec<usize> = Vec::new();
    let mut window_slot: Vec<usize> = Vec::with_capacity(b);
    for &w in &batch.window_refs {
        match unique.iter().position(|&u| u == w) {
            Some(i) => window_slot.push(i),
            None => {
                unique.push(w);
                window_slot.push(unique.len() - 1);
            }
        }
    }
    let s = cfg.window_samples;
    let mut raw = Vec::with_capacity(unique.len() * s);
    for &w in &unique {
        let data = (inputs.windows)(w);
        assert_eq!(data.len(), s, "window {w} has {} samples, expected {s}", data.len());
        raw.extend(data.iter().copied());
    }
    let raw = tape.constant_f64(&raw, &[unique.len(), 1, s]);
    let features = unet_features(tape, store, raw, cfg, mode, bn_nodes);

    // Flatten ids row-major and gather embeddings.
    let mut ids = Vec::with_capacity(b * l);
    let mut pos_ids = Vec::with_capacity(b * l);
    let mut spans: Vec<Option<(usize, usize, usize)>> = Vec::with_capacity(b * l);
    for row in 0..b {
        for pos in 0..l {
            ids.push(batch.input_ids[row][pos] as usize);
            pos_ids.push(pos);
            let masked = batch.labels[row][pos] != -1;
            spans.push(match batch.boundaries[row][pos] {
                Some((on, off)) if !(inputs.mask_cnn_too && masked) => {
                    Some((window_slot[row], on, off))
                }
                _ => None,
            });
        }
    }
    let tok_table = tape.by_name(store, "tok_emb");
    let pos_table = tape.by_name(store, "pos_emb");
    let tok = tape.embedding(tok_table, &ids);
    let pos = tape.embedding(pos_table, &pos_ids);
    let cnn = match cfg.cnn_pool {
        CnnPool::Mean => tape.span_means(features, &spans),
        CnnPool::Max => tape.span_max(features, &spans),
    };
    let sum = tape.add(tok, pos);
    let sum = tape.add(sum, cnn);
    tape.dropout(sum, cfg.dropout, mode == Mode::Train, rng)
}

/// One head's attention weights for one sentence.
#[derive(Debug, Clone, serde::Serialize)]
pub struct AttnMatrix {
    pub layer: usize,
    pub sentence: usize,
    pub head: usize,
    pub seq_len: usize,
    /// Row-major `[seq_len, seq_len]` softmax weights.
    pub weights: Vec<f64>,
}

/// Bidirectional transformer encoder over `[B*L, d_model]`.
pub fn encoder_forward<T: Real>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    hidden: Var,
    attention_mask: &[Vec<u8>],
    cfg: &ModelConfig,
    mode: Mode,
    rng: &mut ChaCha8Rng,
) -> Var {
    encoder_with_attention(tape, store, hidden, attention_mask, cfg, mode, rng, None)
}

/// Encoder forward that can also capture every attention matrix.
#[allow(clippy::too_many_arguments)]
pub fn encoder_with_attention<T: Real>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    hidden: Var,
    attention_mask: &[Vec<u8>],
    cfg: &ModelConfig,
    mode: Mode,
    rng: &mut ChaCha8Rng,
    mut attn_sink: Option<&mut Vec<AttnMatrix>>,
) -> Var {
    let b = attention_mask.len();
    let rows = tape.shape(hidden)[0];
    assert!(b > 0 && rows % b == 0, "hidden rows {rows} not divisible by batch {b}");
    let l = rows / b;
    let d = cfg.d_model;
    let dh = cfg.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();
    let train = mode == Mode::Train;

    // Additive column masks per sentence, shared across layers and heads.
    let col_masks: Vec<Vec<f64>> = attention_mask
        .iter()
        .map(|m| {
            m.iter()
                .map(|&v| if v == 0 { NEG_INF } else { 0.0 })
                .collect()
        })
        .collect();

    let mut h = hidden;
    for layer in 0..cfg.n_layers {
        let name = format!("layer{layer}");
        let project = |tape: &mut Tape<T>, h: Var, what: &str| {
            let w = tape.by_name(store, &format!("{name}.attn.{what}.w"));
            let bias = tape.by_name(store, &format!("{name}.attn.{what}.b"));
            let y = tape.matmul(h, w);
            tape.add_bias_row(y, bias)
        };
        let q = project(tape, h, "wq");
        let k = project(tape, h, "wk");
        let v = project(tape, h, "wv");

        let mut sentence_ctx = Vec::with_capacity(b);
        for row in 0..b {
            let qs = tape.slice_rows(q, row * l, l);
            let ks = tape.slice_rows(k, row * l, l);
            let vs = tape.slice_rows(v, row * l, l);
            let mut head_ctx = Vec::with_capacity(cfg.n_heads);
            for head in 0..cfg.n_heads {
                let qh = tape.slice_cols(qs, head * dh, dh);
                let kh = tape.slice_cols(ks, head * dh, dh);
                let vh = tape.slice_cols(vs, head * dh, dh);
                let kt = tape.transpose2d(kh);
                let scores = tape.matmul(qh, kt);
                let scores = tape.scale(scores, scale);
                let scores = tape.add_row_const(scores, &col_masks[row]);
                let attn = tape.softmax(scores);
                if let Some(sink) = attn_sink.as_deref_mut() {
                    sink.push(AttnMatrix {
                        layer,
                        sentence: row,
                        head,
                        seq_len: l,
                        weights: tape.data(attn).iter().map(|v| v.to_f64()).collect(),
                    });
                }
                head_ctx.push(tape.matmul(attn, vh));
            }
            sentence_ctx.push(tape.concat_cols(&head_ctx));
        }
        let ctx = tape.concat_rows(&sentence_ctx);
        let attn_out = {
            let w = tape.by_name(store, &format!("{name}.attn.wo.w"));
            let bias = tape.by_name(store, &format!("{name}.attn.wo.b"));
            let y = tape.matmul(ctx, w);
            let y = tape.add_bias_row(y, bias);
            tape.dropout(y, cfg.dropout, train, rng)
        };
        let res1 = tape.add(h, attn_out);
        let g1 = tape.by_name(store, &format!("{name}.ln1.gamma"));
        let b1 = tape.by_name(store, &format!("{name}.ln1.beta"));
        let norm1 = tape.layer_norm(res1, g1, b1, LN_EPS);

        let ffn = {
            let w1 = tape.by_name(store, &format!("{name}.ffn.fc1.w"));
            let bias1 = tape.by_name(store, &format!("{name}.ffn.fc1.b"));
            let w2 = tape.by_name(store, &format!("{name}.ffn.fc2.w"));
            let bias2 = tape.by_name(store, &format!("{name}.ffn.fc2.b"));
            let y = tape.matmul(norm1, w1);
            let y = tape.add_bias_row(y, bias1);
            let y = tape.gelu(y);
            let y = tape.matmul(y, w2);
            let y = tape.add_bias_row(y, bias2);
            tape.dropout(y, cfg.dropout, train, rng)
        };
        let res2 = tape.add(norm1, ffn);
        let g2 = tape.by_name(store, &format!("{name}.ln2.gamma"));
        let b2 = tape.by_name(store, &format!("{name}.ln2.beta"));
        h = tape.layer_norm(res2, g2, b2, LN_EPS);
        let _ = d;
    }
    h
}

/// Linear projection of hidden rows onto the wave-token inventory.
pub fn mlm_logits<T: Real>(tape: &mut Tape<T>, store: &ParamStore<T>, hidden: Var) -> Var {
    let w = tape.by_name(store, "mlm.w");
    let b = tape.by_name(store, "mlm.b");
    let y = tape.matmul(hidden, w);
    tape.add_bias_row(y, b)
}

/// Task-head forward from encoder output `[B*L, d_model]` to class logits
/// `[B, n_classes]`.
pub fn head_forward<T: Real>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    hidden: Var,
    kind: HeadKind,
    attention_mask: &[Vec<u8>],
    cfg: &ModelConfig,
    mode: Mode,
    bn_nodes: &mut Vec<(String, Var)>,
) -> Var {
    let b = attention_mask.len();
    let rows = tape.shape(hidden)[0];
    assert!(b > 0 && rows % b == 0);
    let l = rows / b;
    match kind {
        HeadKind::DenseBinary | HeadKind::DenseMulticlass => {
            let pooled = match cfg.pooling {
                Pooling::Cls => {
                    let cls_rows: Vec<usize> = (0..b).map(|row| row * l).collect();
                    tape.gather_rows(hidden, &cls_rows)
                }
                Pooling::Mean => {
                    let conv = tape.rows_to_conv_layout(hidden, b);
                    tape.masked_mean_length(conv, attention_mask)
                }
            };
            let w1 = tape.by_name(store, "head.fc1.w");
            let b1 = tape.by_name(store, "head.fc1.b");
            let w2 = tape.by_name(store, "head.fc2.w");
            let b2 = tape.by_name(store, "head.fc2.b");
            let y = tape.matmul(pooled, w1);
            let y = tape.add_bias_row(y, b1);
            let y = tape.gelu(y);
            let y = tape.matmul(y, w2);
            tape.add_bias_row(y, b2)
        }
        HeadKind::ResidualMulticlass => {
            // Zero PAD rows so sequence convolutions cannot read them.
            let keep: Vec<f64> = attention_mask
                .iter()
                .flat_map(|m| m.iter().map(|&v| v as f64))
                .flat_map(|v| std::iter::repeat(v).take(cfg.d_model))
                .collect();
            let keep = tape.constant_f64(&keep, &[rows, cfg.d_model]);
            let masked = tape.mul(hidden, keep);
            let mut x = tape.rows_to_conv_layout(masked, b);
            for block in 0..2 {
                let w = tape.by_name(store, &format!("head.block{block}.w"));
                let bias = tape.by_name(store, &format!("head.block{block}.b"));
                let y = tape.conv1d(x, w, 1, 1);
                let y = tape.add_bias_channel(y, bias);
                let y = batch_norm(tape, store, y, &format!("head.bn{block}"), mode, bn_nodes);
                let y = tape.relu(y);
                x = tape.add(y, x);
            }
            let pooled = tape.masked_mean_length(x, attention_mask);
            let w = tape.by_name(store, "head.out.w");
            let bias = tape.by_name(store, "head.out.b");
            let y = tape.matmul(pooled, w);
            tape.add_bias_row(y, bias)
        }
    }
}

/// One full forward pass to masked-wave logits. Returns the logits var and
/// the recorded batch-norm nodes (empty in eval mode).
pub struct ForwardOutput {
    pub hidden: Var,
    pub logits: Var,
    pub bn_nodes: Vec<(String, Var)>,
}

pub fn forward_mlm<T: Real>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    inputs: &EmbedInputs,
    cfg: &ModelConfig,
    mode: Mode,
    rng: &mut ChaCha8Rng,
) -> ForwardOutput {
    let mut bn_nodes = Vec::new();
    let h = embed(tape, store, inputs, cfg, mode, rng, &mut bn_nodes);
    let h = encoder_forward(
        tape,
        store,
        h,
        &inputs.batch.attention_mask,
        cfg,
        mode,
        rng,
    );
    let logits = mlm_logits(tape, store, h);
    ForwardOutput {
        hidden: h,
        logits,
        bn_nodes,
    }
}

/// Convenience: flattened MLM labels of a batch.
pub fn flat_labels(batch: &MaskedBatch) -> Vec<i32> {
    batch.labels.iter().flatten().copied().collect()
}

/// Convenience: `AdamState` sized for a store.
pub fn optimizer<T: Real>(store: &ParamStore<T>, lr: f64) -> AdamState<T> {
    AdamState::new(store, lr)
}

#[cfg(test)]
mod tests;
