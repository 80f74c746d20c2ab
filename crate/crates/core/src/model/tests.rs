use super::*;
use crate::autograd::Tape;
use crate::sentences::MaskedBatch;

fn tiny_cfg() -> ModelConfig {
    ModelConfig {
        d_model: 8,
        n_layers: 1,
        n_heads: 2,
        d_ff: 16,
        max_seq_len: 16,
        vocab_size: 10, // 6 wave tokens + 4 specials
        dropout: 0.0,
        unet_channels: (2, 3),
        window_samples: 40,
        ..ModelConfig::default()
    }
}

const PAD: u32 = 6;
const SEP: u32 = 7;
const MASK: u32 = 8;
const CLS: u32 = 9;

fn windows(n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|w| {
            (0..40)
                .map(|i| ((i + 3 * w) as f64 * 0.37).sin() * 0.5)
                .collect()
        })
        .collect()
}

/// Two sentences over two windows, the second padded by two PADs.
fn toy_batch() -> MaskedBatch {
    MaskedBatch {
        input_ids: vec![
            vec![CLS, 0, MASK, 2, 3, SEP],
            vec![CLS, 4, 5, SEP, PAD, PAD],
        ],
        labels: vec![
            vec![-1, -1, 1, -1, -1, -1],
            vec![-1; 6],
        ],
        attention_mask: vec![vec![1; 6], vec![1, 1, 1, 1, 0, 0]],
        boundaries: vec![
            vec![None, Some((0, 8)), Some((8, 20)), Some((20, 28)), Some((28, 40)), None],
            vec![None, Some((2, 12)), Some((12, 30)), None, None, None],
        ],
        window_refs: vec![0, 1],
        seq_len: 6,
    }
}

fn run_forward(
    cfg: &ModelConfig,
    store: &ParamStore<f32>,
    batch: &MaskedBatch,
    wins: &[Vec<f64>],
    mode: Mode,
) -> (Vec<f32>, Vec<f32>) {
    let mut tape: Tape<f32> = Tape::new();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let inputs = EmbedInputs {
        batch,
        windows: &|i| wins[i].as_slice(),
        mask_cnn_too: false,
    };
    let out = forward_mlm(&mut tape, store, &inputs, cfg, mode, &mut rng);
    (
        tape.data(out.hidden).to_vec(),
        tape.data(out.logits).to_vec(),
    )
}

#[test]
fn unet_output_is_per_sample_with_d_model_channels() {
    let cfg = tiny_cfg();
    let store: ParamStore<f32> = init_params(&cfg, 0);
    let mut tape: Tape<f32> = Tape::new();
    let raw = tape.constant_f64(&windows(2).concat(), &[2, 1, 40]);
    let mut bn = Vec::new();
    let f = unet_features(&mut tape, &store, raw, &cfg, Mode::Eval, &mut bn);
    assert_eq!(tape.shape(f), &[2, cfg.d_model, cfg.window_samples]);
}

#[test]
fn unet_pads_and_crops_odd_lengths() {
    let cfg = ModelConfig {
        window_samples: 42,
        ..tiny_cfg()
    };
    let store: ParamStore<f32> = init_params(&cfg, 0);
    let mut tape: Tape<f32> = Tape::new();
    let raw_data: Vec<f64> = (0..42).map(|i| (i as f64 * 0.2).cos()).collect();
    let raw = tape.constant_f64(&raw_data, &[1, 1, 42]);
    let mut bn = Vec::new();
    let f = unet_features(&mut tape, &store, raw, &cfg, Mode::Eval, &mut bn);
    assert_eq!(tape.shape(f), &[1, cfg.d_model, 42]);
}

#[test]
fn unet_features_shift_with_the_input() {
    // Shift-covariance: shifting the input by 8 samples shifts the feature
    // map by 8, up to boundary effects.
    let cfg = ModelConfig {
        window_samples: 256,
        ..tiny_cfg()
    };
    let store: ParamStore<f32> = init_params(&cfg, 3);
    let base: Vec<f64> = (0..256)
        .map(|i| (-((i as f64 - 96.0) / 12.0).powi(2) / 2.0).exp())
        .collect();
    let shifted: Vec<f64> = (0..256)
        .map(|i| (-((i as f64 - 104.0) / 12.0).powi(2) / 2.0).exp())
        .collect();
    let feats = |x: &[f64]| -> Vec<f32> {
        let mut tape: Tape<f32> = Tape::new();
        let raw = tape.constant_f64(x, &[1, 1, 256]);
        let mut bn = Vec::new();
        let f = unet_features(&mut tape, &store, raw, &cfg, Mode::Eval, &mut bn);
        tape.data(f).to_vec()
    };
    let fa = feats(&base);
    let fb = feats(&shifted);
    let d = cfg.d_model;
    let mut dev = 0.0f64;
    let mut rms = 0.0f64;
    let mut n = 0usize;
    for ch in 0..d {
        for i in 64..192 {
            let a = fa[ch * 256 + i] as f64;
            let b = fb[ch * 256 + i + 8] as f64;
            dev += (a - b).abs();
            rms += a * a;
            n += 1;
        }
    }
    let dev = dev / n as f64;
    let rms = (rms / n as f64).sqrt();
    assert!(
        dev < 0.10 * rms,
        "interior deviation {dev} vs feature rms {rms}"
    );
}

#[test]
fn unet_gradients_match_finite_differences() {
    let cfg = ModelConfig {
        window_samples: 16,
        ..tiny_cfg()
    };
    let store: ParamStore<f64> = init_params(&cfg, 1);
    let fd = fd_check_store(
        &cfg,
        &store,
        &["unet.enc1.w", "unet.bn_e2.gamma", "unet.up1.w", "unet.dec2.w", "unet.out.b"],
        |tape, store| {
            let raw_data: Vec<f64> = (0..16).map(|i| (i as f64 * 0.7).sin()).collect();
            let raw = tape.constant_f64(&raw_data, &[1, 1, 16]);
            let mut bn = Vec::new();
            let f = unet_features(tape, store, raw, &cfg, Mode::Train, &mut bn);
            let sq = tape.mul(f, f);
            tape.sum(sq)
        },
    );
    assert!(fd < 1e-2, "worst relative error {fd}");
}

/// Finite-difference sweep over named store parameters (a few coordinates
/// each) against reverse-mode gradients of `loss_fn`.
fn fd_check_store(
    _cfg: &ModelConfig,
    store: &ParamStore<f64>,
    names: &[&str],
    loss_fn: impl Fn(&mut Tape<f64>, &ParamStore<f64>) -> crate::autograd::Var,
) -> f64 {
    let eps = 1e-4;
    let mut store = store.clone();
    let mut tape: Tape<f64> = Tape::new();
    let loss = loss_fn(&mut tape, &store);
    let mut shadow = store.clone();
    tape.backward(loss, &mut shadow);

    let mut worst = 0.0f64;
    for name in names {
        let idx = store.index_of(name);
        let n = store.param(idx).value.len();
        let coords: Vec<usize> = [0usize, n / 2, n - 1].into_iter().take(n.min(3)).collect();
        for &ci in &coords {
            let orig = store.param(idx).value[ci];
            store.param_mut(idx).value[ci] = orig + eps;
            let mut tp: Tape<f64> = Tape::new();
            let lp = loss_fn(&mut tp, &store);
            let lp = tp.value_scalar(lp);
            store.param_mut(idx).value[ci] = orig - eps;
            let mut tm: Tape<f64> = Tape::new();
            let lm = loss_fn(&mut tm, &store);
            let lm = tm.value_scalar(lm);
            store.param_mut(idx).value[ci] = orig;
            let numeric = (lp - lm) / (2.0 * eps);
            let analytic = shadow.param(idx).grad[ci];
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    worst
}

#[test]
fn pad_embedding_is_token_plus_position_only() {
    let cfg = tiny_cfg();
    let store: ParamStore<f32> = init_params(&cfg, 0);
    let batch = toy_batch();
    let wins = windows(2);
    let mut tape: Tape<f32> = Tape::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let inputs = EmbedInputs {
        batch: &batch,
        windows: &|i| wins[i].as_slice(),
        mask_cnn_too: false,
    };
    let mut bn = Vec::new();
    let h = embed(&mut tape, &store, &inputs, &cfg, Mode::Eval, &mut rng, &mut bn);
    let d = cfg.d_model;
    let hv = tape.data(h);
    // Row 1 (second sentence), position 4 is PAD.
    let row = 1 * batch.seq_len + 4;
    let tok = &store.get("tok_emb").value[PAD as usize * d..(PAD as usize + 1) * d];
    let pos = &store.get("pos_emb").value[4 * d..5 * d];
    for j in 0..d {
        let expect = tok[j] + pos[j];
        assert_eq!(hv[row * d + j], expect, "CNN part must be exactly zero");
    }
}

#[test]
fn identical_tokens_differ_only_by_position() {
    let cfg = tiny_cfg();
    let store: ParamStore<f32> = init_params(&cfg, 0);
    let wins = windows(1);
    // Same token id and same span at positions 1 and 2.
    let batch = MaskedBatch {
        input_ids: vec![vec![CLS, 3, 3, SEP]],
        labels: vec![vec![-1; 4]],
        attention_mask: vec![vec![1; 4]],
        boundaries: vec![vec![None, Some((4, 12)), Some((4, 12)), None]],
        window_refs: vec![0],
        seq_len: 4,
    };
    let mut tape: Tape<f32> = Tape::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let inputs = EmbedInputs {
        batch: &batch,
        windows: &|i| wins[i].as_slice(),
        mask_cnn_too: false,
    };
    let mut bn = Vec::new();
    let h = embed(&mut tape, &store, &inputs, &cfg, Mode::Eval, &mut rng, &mut bn);
    let d = cfg.d_model;
    let hv = tape.data(h);
    let pe = &store.get("pos_emb").value;
    for j in 0..d {
        let diff = hv[d + j] - hv[2 * d + j];
        let pos_diff = pe[d + j] - pe[2 * d + j];
        assert!((diff - pos_diff).abs() < 1e-6);
    }
}

#[test]
fn signal_changes_stay_inside_their_token_span() {
    // Perturb one sample deep inside a wide token's span; rows of other
    // tokens (outside the U-Net receptive field) must be bit-identical.
    let cfg = ModelConfig {
        window_samples: 400,
        ..tiny_cfg()
    };
    let store: ParamStore<f32> = init_params(&cfg, 2);
    let mut base: Vec<Vec<f64>> = vec![(0..400).map(|i| (i as f64 * 0.13).sin() * 0.3).collect()];
    let batch = MaskedBatch {
        input_ids: vec![vec![CLS, 0, 1, 2, SEP]],
        labels: vec![vec![-1; 5]],
        attention_mask: vec![vec![1; 5]],
        // Token 1 owns [100, 300): its center is > 60 samples away from the
        // [0,100) and [300,400) spans, far beyond the U-Net receptive field.
        boundaries: vec![vec![None, Some((0, 100)), Some((100, 300)), Some((300, 400)), None]],
        window_refs: vec![0],
        seq_len: 5,
    };
    let embed_rows = |wins: &[Vec<f64>]| -> Vec<f32> {
        let mut tape: Tape<f32> = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let inputs = EmbedInputs {
            batch: &batch,
            windows: &|i| wins[i].as_slice(),
            mask_cnn_too: false,
        };
        let mut bn = Vec::new();
        let h = embed(&mut tape, &store, &inputs, &cfg, Mode::Eval, &mut rng, &mut bn);
        tape.data(h).to_vec()
    };
    let before = embed_rows(&base);
    base[0][200] += 0.5; // center of token 2's span
    let after = embed_rows(&base);
    let d = cfg.d_model;
    for row in 0..5 {
        let same = before[row * d..(row + 1) * d] == after[row * d..(row + 1) * d];
        if row == 2 {
            assert!(!same, "perturbed token's row must change");
        } else {
            assert!(same, "row {row} changed outside the perturbed span");
        }
    }
}

#[test]
fn single_token_attends_to_itself() {
    let cfg = tiny_cfg();
    let store: ParamStore<f32> = init_params(&cfg, 0);
    let mut tape: Tape<f32> = Tape::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let h = tape.constant_f64(&vec![0.3; cfg.d_model], &[1, cfg.d_model]);
    let mut attn = Vec::new();
    let _ = encoder_with_attention(
        &mut tape,
        &store,
        h,
        &[vec![1u8]],
        &cfg,
        Mode::Eval,
        &mut rng,
        Some(&mut attn),
    );
    assert_eq!(attn.len(), cfg.n_layers * cfg.n_heads);
    for m in &attn {
        assert_eq!(m.weights.len(), 1);
        assert!((m.weights[0] - 1.0).abs() < 1e-6);
    }
}

#[test]
fn attention_over_pad_columns_is_zero() {
    let cfg = tiny_cfg();
    let store: ParamStore<f32> = init_params(&cfg, 0);
    let mut tape: Tape<f32> = Tape::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let h = tape.constant_f64(&check_fill(11, 4 * cfg.d_model), &[4, cfg.d_model]);
    let mask = vec![vec![1u8, 1, 0, 0]];
    let mut attn = Vec::new();
    let _ = encoder_with_attention(
        &mut tape,
        &store,
        h,
        &mask,
        &cfg,
        Mode::Eval,
        &mut rng,
        Some(&mut attn),
    );
    for m in &attn {
        for q in 0..4 {
            for kpos in 2..4 {
                let w = m.weights[q * 4 + kpos];
                assert!(w.abs() < 1e-12, "PAD column got weight {w}");
            }
        }
    }
}

fn check_fill(seed: u64, n: usize) -> Vec<f64> {
    crate::autograd::check::fill(seed, n)
}

#[test]
fn encoder_is_permutation_equivariant() {
    // Swap two positions of the input (the mask is uniform): outputs swap.
    let cfg = tiny_cfg();
    let store: ParamStore<f32> = init_params(&cfg, 4);
    let d = cfg.d_model;
    let rows = 5;
    let base = check_fill(21, rows * d);
    let mut swapped = base.clone();
    for j in 0..d {
        swapped.swap(1 * d + j, 3 * d + j);
    }
    let run = |data: &[f64]| -> Vec<f32> {
        let mut tape: Tape<f32> = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let h = tape.constant_f64(data, &[rows, d]);
        let out = encoder_forward(&mut tape, &store, h, &[vec![1u8; rows]], &cfg, Mode::Eval, &mut rng);
        tape.data(out).to_vec()
    };
    let a = run(&base);
    let b = run(&swapped);
    for j in 0..d {
        assert!((a[d + j] - b[3 * d + j]).abs() < 1e-5);
        assert!((a[3 * d + j] - b[d + j]).abs() < 1e-5);
        assert!((a[j] - b[j]).abs() < 1e-5);
    }
}

#[test]
fn mlm_logits_cover_the_wave_inventory_and_start_uniform() {
    let cfg = tiny_cfg();
    let store: ParamStore<f32> = init_params(&cfg, 0);
    let batch = toy_batch();
    let wins = windows(2);
    let (_, logits) = run_forward(&cfg, &store, &batch, &wins, Mode::Eval);
    assert_eq!(logits.len(), 2 * 6 * cfg.n_wave_tokens());

    // Cross-entropy of an untrained model against random wave targets is
    // close to ln(n_wave_tokens).
    let mut tape: Tape<f32> = Tape::new();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let inputs = EmbedInputs {
        batch: &batch,
        windows: &|i| wins[i].as_slice(),
        mask_cnn_too: false,
    };
    let out = forward_mlm(&mut tape, &store, &inputs, &cfg, Mode::Eval, &mut rng);
    let labels = flat_labels(&batch);
    let (loss, count) = tape.cross_entropy(out.logits, &labels);
    assert_eq!(count, 1);
    let expect = (cfg.n_wave_tokens() as f64).ln();
    assert!(
        (tape.value_scalar(loss) - expect).abs() < 0.3,
        "initial loss {} vs ln(vocab) {expect}",
        tape.value_scalar(loss)
    );
}

#[test]
fn non_pad_outputs_ignore_pad_token_ids() {
    let cfg = tiny_cfg();
    let store: ParamStore<f32> = init_params(&cfg, 0);
    let wins = windows(2);
    let mut batch = toy_batch();
    let (_, logits_a) = run_forward(&cfg, &store, &batch, &wins, Mode::Eval);
    // Replace PAD ids with arbitrary wave ids (mask still 0 there).
    batch.input_ids[1][4] = 3;
    batch.input_ids[1][5] = 0;
    let (_, logits_b) = run_forward(&cfg, &store, &batch, &wins, Mode::Eval);
    let c = cfg.n_wave_tokens();
    for row in 0..2 {
        for pos in 0..6 {
            if batch.attention_mask[row][pos] == 0 {
                continue;
            }
            let i = (row * 6 + pos) * c;
            assert_eq!(
                logits_a[i..i + c],
                logits_b[i..i + c],
                "non-PAD logits changed at row {row} pos {pos}"
            );
        }
    }
}

#[test]
fn dense_head_shapes_and_residual_identity() {
    let cfg = tiny_cfg();
    let mut store: ParamStore<f32> = init_params(&cfg, 0);
    add_head_params(&mut store, HeadKind::DenseBinary, 2, &cfg, 1);
    let d = cfg.d_model;
    let rows = 8;
    let mask = vec![vec![1u8; 4]; 2];
    let mut tape: Tape<f32> = Tape::new();
    let h = tape.constant_f64(&check_fill(31, rows * d), &[rows, d]);
    let mut bn = Vec::new();
    let logits = head_forward(&mut tape, &store, h, HeadKind::DenseBinary, &mask, &cfg, Mode::Eval, &mut bn);
    assert_eq!(tape.shape(logits), &[2, 2]);

    // Residual head with zeroed branch weights reduces to mean-pool+linear.
    let mut store2: ParamStore<f32> = init_params(&cfg, 0);
    add_head_params(&mut store2, HeadKind::ResidualMulticlass, 5, &cfg, 2);
    for block in 0..2 {
        for suffix in ["w", "b"] {
            let p = store2.get_mut(&format!("head.block{block}.{suffix}"));
            p.value.iter_mut().for_each(|v| *v = 0.0);
        }
        let beta = store2.get_mut(&format!("head.bn{block}.beta"));
        beta.value.iter_mut().for_each(|v| *v = 0.0);
    }
    let mut tape2: Tape<f32> = Tape::new();
    let hdata = check_fill(32, rows * d);
    let h2 = tape2.constant_f64(&hdata, &[rows, d]);
    let mut bn2 = Vec::new();
    let logits2 = head_forward(&mut tape2, &store2, h2, HeadKind::ResidualMulticlass, &mask, &cfg, Mode::Eval, &mut bn2);
    assert_eq!(tape2.shape(logits2), &[2, 5]);

    // Oracle: mask-aware mean pool + linear, computed directly.
    let w = &store2.get("head.out.w").value;
    let bias = &store2.get("head.out.b").value;
    for b in 0..2 {
        let mut pooled = vec![0.0f64; d];
        for pos in 0..4 {
            for j in 0..d {
                pooled[j] += hdata[(b * 4 + pos) * d + j];
            }
        }
        pooled.iter_mut().for_each(|v| *v /= 4.0);
        for cls in 0..5 {
            let mut expect = bias[cls] as f64;
            for j in 0..d {
                expect += pooled[j] * w[j * 5 + cls] as f64;
            }
            let got = tape2.data(logits2)[b * 5 + cls] as f64;
            assert!(
                (got - expect).abs() < 1e-5,
                "batch {b} class {cls}: {got} vs {expect}"
            );
        }
    }
}

#[test]
fn composed_model_gradients_match_finite_differences() {
    let cfg = ModelConfig {
        window_samples: 24,
        ..tiny_cfg()
    };
    let store: ParamStore<f64> = init_params(&cfg, 7);
    let wins: Vec<Vec<f64>> = vec![
        (0..24).map(|i| (i as f64 * 0.41).sin() * 0.4).collect(),
    ];
    let batch = MaskedBatch {
        input_ids: vec![vec![CLS, 0, MASK, SEP]],
        labels: vec![vec![-1, -1, 2, -1]],
        attention_mask: vec![vec![1; 4]],
        boundaries: vec![vec![None, Some((0, 10)), Some((10, 20)), None]],
        window_refs: vec![0],
        seq_len: 4,
    };
    let names = [
        "tok_emb",
        "pos_emb",
        "unet.enc1.w",
        "unet.out.w",
        "layer0.attn.wq.w",
        "layer0.attn.wo.b",
        "layer0.ln1.gamma",
        "layer0.ffn.fc1.w",
        "layer0.ln2.beta",
        "mlm.w",
        "mlm.b",
    ];
    let worst = fd_check_store(&cfg, &store, &names, |tape, store| {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let inputs = EmbedInputs {
            batch: &batch,
            windows: &|i| wins[i].as_slice(),
            mask_cnn_too: false,
        };
        let out = forward_mlm(tape, store, &inputs, &cfg, Mode::Train, &mut rng);
        let labels = flat_labels(&batch);
        let (loss, _) = tape.cross_entropy(out.logits, &labels);
        loss
    });
    assert!(worst < 1e-2, "composed-model FD mismatch: {worst}");
}

#[test]
fn forward_is_finite_across_seeds() {
    let cfg = ModelConfig {
        window_samples: 24,
        ..tiny_cfg()
    };
    let wins: Vec<Vec<f64>> = vec![(0..24).map(|i| (i as f64 * 0.3).cos()).collect()];
    for seed in 0..1000u64 {
        let store: ParamStore<f32> = init_params(&cfg, seed);
        let batch = MaskedBatch {
            input_ids: vec![vec![CLS, (seed % 6) as u32, MASK, SEP]],
            labels: vec![vec![-1, -1, (seed % 6) as i32, -1]],
            attention_mask: vec![vec![1; 4]],
            boundaries: vec![vec![None, Some((0, 12)), Some((12, 24)), None]],
            window_refs: vec![0],
            seq_len: 4,
        };
        let (hidden, logits) = run_forward(&cfg, &store, &batch, &wins, Mode::Eval);
        assert!(hidden.iter().all(|v| v.is_finite()), "seed {seed}: hidden NaN/Inf");
        assert!(logits.iter().all(|v| v.is_finite()), "seed {seed}: logits NaN/Inf");
    }
}

#[test]
fn checkpoint_round_trip_is_bitwise_identical() {
    let cfg = tiny_cfg();
    let store: ParamStore<f32> = init_params(&cfg, 6);
    let adam = optimizer(&store, 1e-3);
    let dir = tempfile::tempdir().unwrap();
    let meta = CheckpointMeta {
        epoch: 3,
        step: 42,
        vocab_fingerprint: "abc123".into(),
    };
    save_checkpoint(dir.path(), &cfg, &store, Some(&adam), &meta).unwrap();
    let loaded = load_checkpoint(dir.path()).unwrap();
    assert_eq!(loaded.config, cfg);
    assert_eq!(loaded.meta, meta);
    assert_eq!(loaded.store.len(), store.len());
    for (a, b) in store.iter().zip(loaded.store.iter()) {
        assert_eq!(a.name, b.name);
        assert_eq!(a.shape, b.shape);
        assert_eq!(a.trainable, b.trainable);
        let bits_a: Vec<u32> = a.value.iter().map(|v| v.to_bits()).collect();
        let bits_b: Vec<u32> = b.value.iter().map(|v| v.to_bits()).collect();
        assert_eq!(bits_a, bits_b);
    }
    let opt = loaded.optimizer.unwrap();
    assert_eq!(opt.step, adam.step);
    assert_eq!(opt.lr, adam.lr);

    // Same forward output after reload.
    let batch = toy_batch();
    let wins = windows(2);
    let (_, la) = run_forward(&cfg, &store, &batch, &wins, Mode::Eval);
    let (_, lb) = run_forward(&cfg, &loaded.store, &batch, &wins, Mode::Eval);
    let bits_a: Vec<u32> = la.iter().map(|v| v.to_bits()).collect();
    let bits_b: Vec<u32> = lb.iter().map(|v| v.to_bits()).collect();
    assert_eq!(bits_a, bits_b);
}

#[test]
fn invalid_config_is_rejected() {
    let cfg = ModelConfig {
        d_model: 10,
        n_heads: 4,
        ..ModelConfig::default()
    };
    assert!(cfg.validate().is_err());
}
