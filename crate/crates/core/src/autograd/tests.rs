use super::check::{check_gradients, fill};
use super::{Init, ParamStore, Tape};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-3;
const TOL: f64 = 1e-3;

fn assert_grads_ok(
    inputs: &[(Vec<f64>, Vec<usize>)],
    f: impl Fn(&mut Tape<f64>, &[super::Var]) -> super::Var,
) {
    let r = check_gradients(inputs, EPS, f);
    assert!(
        r.max_rel_err < TOL,
        "finite-difference mismatch: {} over {} coords",
        r.max_rel_err,
        r.checked
    );
}

#[test]
fn matmul_identity_returns_input() {
    let mut tape: Tape<f64> = Tape::new();
    let eye = tape.constant(vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0], &[3, 3]);
    let a = tape.constant(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0], &[3, 3]);
    let out = tape.matmul(eye, a);
    assert_eq!(tape.data(out), tape.data(a));
}

#[test]
fn softmax_of_zeros_is_uniform() {
    let mut tape: Tape<f64> = Tape::new();
    let x = tape.constant(vec![0.0, 0.0, 0.0], &[1, 3]);
    let y = tape.softmax(x);
    for &v in tape.data(y) {
        assert!((v - 1.0 / 3.0).abs() < 1e-12);
    }
}

#[test]
fn conv1d_matches_hand_computed_example() {
    // True convolution: x = [1,2,3], w = [1,0,-1], padding 1 -> [2, 2, -2].
    let mut tape: Tape<f64> = Tape::new();
    let x = tape.constant(vec![1.0, 2.0, 3.0], &[1, 1, 3]);
    let w = tape.constant(vec![1.0, 0.0, -1.0], &[1, 1, 3]);
    let y = tape.conv1d(x, w, 1, 1);
    assert_eq!(tape.data(y), &[2.0, 2.0, -2.0]);
}

#[test]
fn sum_gradient_is_ones() {
    let mut store: ParamStore<f64> = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    store.add("x", &[5], Init::Normal(1.0), true, &mut rng);
    let mut tape = Tape::new();
    let x = tape.param(&store, 0);
    let loss = tape.sum(x);
    tape.backward(loss, &mut store);
    assert_eq!(store.get("x").grad, vec![1.0; 5]);
}

#[test]
fn dot_product_gradient_is_the_other_vector() {
    let mut store: ParamStore<f64> = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    store.add("x", &[4], Init::Normal(1.0), true, &mut rng);
    let y = vec![2.0, -1.0, 0.5, 3.0];
    let mut tape = Tape::new();
    let xv = tape.param(&store, 0);
    let yv = tape.constant(y.clone(), &[4]);
    let prod = tape.mul(xv, yv);
    let loss = tape.sum(prod);
    tape.backward(loss, &mut store);
    assert_eq!(store.get("x").grad, y);
}

#[test]
fn gradients_accumulate_across_reuse() {
    // loss = sum(x) + sum(x) must give grad 2 everywhere.
    let mut store: ParamStore<f64> = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    store.add("x", &[3], Init::Normal(1.0), true, &mut rng);
    let mut tape = Tape::new();
    let x = tape.param(&store, 0);
    let s1 = tape.sum(x);
    let s2 = tape.sum(x);
    let loss = tape.add(s1, s2);
    tape.backward(loss, &mut store);
    assert_eq!(store.get("x").grad, vec![2.0; 3]);
}

#[test]
fn cross_entropy_with_all_ignored_labels_is_zero() {
    let mut tape: Tape<f64> = Tape::new();
    let logits = tape.input(fill(3, 12), &[4, 3]);
    let (loss, count) = tape.cross_entropy(logits, &[-1, -1, -1, -1]);
    assert_eq!(count, 0);
    assert_eq!(tape.value_scalar(loss), 0.0);
    assert!(tape.value_scalar(loss).is_finite());
}

#[test]
fn masked_positions_only_feed_cross_entropy() {
    let mut tape: Tape<f64> = Tape::new();
    let logits = tape.input(vec![0.0; 6], &[2, 3]);
    let (loss, count) = tape.cross_entropy(logits, &[1, -1]);
    assert_eq!(count, 1);
    assert!((tape.value_scalar(loss) - 3.0f64.ln()).abs() < 1e-12);
}

// Finite-difference checks, one per primitive.

#[test]
fn fd_add_mul_scale() {
    assert_grads_ok(
        &[(fill(10, 6), vec![2, 3]), (fill(11, 6), vec![2, 3])],
        |t, v| {
            let a = t.add(v[0], v[1]);
            let m = t.mul(a, v[0]);
            let s = t.scale(m, 1.7);
            t.sum(s)
        },
    );
}

#[test]
fn fd_bias_adds() {
    assert_grads_ok(
        &[
            (fill(12, 6), vec![2, 3]),
            (fill(13, 3), vec![3]),
            (fill(14, 12), vec![1, 2, 6]),
            (fill(15, 2), vec![2]),
        ],
        |t, v| {
            let a = t.add_bias_row(v[0], v[1]);
            let b = t.add_bias_channel(v[2], v[3]);
            let sa = t.sum(a);
            let sb = t.sum(b);
            // Weight the two terms to avoid symmetric cancellation.
            let sb2 = t.scale(sb, 0.37);
            t.add(sa, sb2)
        },
    );
}

#[test]
fn fd_matmul_transpose() {
    assert_grads_ok(
        &[(fill(16, 6), vec![2, 3]), (fill(17, 12), vec![3, 4])],
        |t, v| {
            let m = t.matmul(v[0], v[1]);
            let mt = t.transpose2d(m);
            let sq = t.mul(mt, mt);
            t.sum(sq)
        },
    );
}

#[test]
fn fd_relu_gelu() {
    // Keep inputs away from the relu kink, where FD is ill-defined.
    let x: Vec<f64> = fill(18, 8)
        .into_iter()
        .map(|v| if v.abs() < 0.05 { v + 0.2 } else { v })
        .collect();
    assert_grads_ok(&[(x, vec![2, 4])], |t, v| {
        let r = t.relu(v[0]);
        let g = t.gelu(r);
        t.sum(g)
    });
}

#[test]
fn fd_softmax() {
    assert_grads_ok(&[(fill(19, 8), vec![2, 4])], |t, v| {
        let s = t.softmax(v[0]);
        let sq = t.mul(s, s);
        t.sum(sq)
    });
}

#[test]
fn fd_layer_norm() {
    assert_grads_ok(
        &[
            (fill(20, 8), vec![2, 4]),
            (fill(21, 4).iter().map(|v| v + 1.5).collect(), vec![4]),
            (fill(22, 4), vec![4]),
        ],
        |t, v| {
            let ln = t.layer_norm(v[0], v[1], v[2], 1e-5);
            let sq = t.mul(ln, ln);
            t.sum(sq)
        },
    );
}

#[test]
fn fd_batch_norm_train_and_eval() {
    assert_grads_ok(
        &[
            (fill(23, 12), vec![2, 2, 3]),
            (fill(24, 2).iter().map(|v| v + 1.5).collect(), vec![2]),
            (fill(25, 2), vec![2]),
        ],
        |t, v| {
            let bn = t.batch_norm1d(v[0], v[1], v[2], 1e-5, None);
            let sq = t.mul(bn, bn);
            t.sum(sq)
        },
    );
    let means = [0.1, -0.2];
    let vars = [1.3, 0.8];
    assert_grads_ok(
        &[
            (fill(26, 12), vec![2, 2, 3]),
            (fill(27, 2).iter().map(|v| v + 1.5).collect(), vec![2]),
            (fill(28, 2), vec![2]),
        ],
        |t, v| {
            let bn = t.batch_norm1d(v[0], v[1], v[2], 1e-5, Some((&means, &vars)));
            let sq = t.mul(bn, bn);
            t.sum(sq)
        },
    );
}

#[test]
fn fd_conv1d() {
    assert_grads_ok(
        &[(fill(29, 20), vec![2, 2, 5]), (fill(30, 18), vec![3, 2, 3])],
        |t, v| {
            let c = t.conv1d(v[0], v[1], 1, 1);
            let sq = t.mul(c, c);
            t.sum(sq)
        },
    );
    // Strided, no padding.
    assert_grads_ok(
        &[(fill(31, 16), vec![2, 1, 8]), (fill(32, 4), vec![2, 1, 2])],
        |t, v| {
            let c = t.conv1d(v[0], v[1], 2, 0);
            let sq = t.mul(c, c);
            t.sum(sq)
        },
    );
}

#[test]
fn fd_transposed_conv1d() {
    assert_grads_ok(
        &[(fill(33, 12), vec![2, 2, 3]), (fill(34, 12), vec![2, 3, 2])],
        |t, v| {
            let c = t.transposed_conv1d(v[0], v[1], 2);
            let sq = t.mul(c, c);
            t.sum(sq)
        },
    );
}

#[test]
fn fd_max_pool() {
    // Spread values so the argmax is stable under the probe epsilon.
    let x: Vec<f64> = (0..16).map(|i| (i as f64 * 0.731).sin() * 3.0).collect();
    assert_grads_ok(&[(x, vec![2, 2, 4])], |t, v| {
        let p = t.max_pool1d(v[0], 2);
        let sq = t.mul(p, p);
        t.sum(sq)
    });
}

#[test]
fn fd_embedding_gather() {
    assert_grads_ok(&[(fill(35, 12), vec![4, 3])], |t, v| {
        let e = t.embedding(v[0], &[1, 3, 1, 0]);
        let g = t.gather_rows(e, &[0, 2, 2]);
        let sq = t.mul(g, g);
        t.sum(sq)
    });
}

#[test]
fn fd_concat_slice_crop() {
    assert_grads_ok(
        &[(fill(36, 8), vec![1, 2, 4]), (fill(37, 4), vec![1, 1, 4])],
        |t, v| {
            let c = t.concat_channels(&[v[0], v[1]]);
            let cropped = t.crop_length(c, 1, 2);
            let sq = t.mul(cropped, cropped);
            t.sum(sq)
        },
    );
    assert_grads_ok(&[(fill(38, 12), vec![3, 4])], |t, v| {
        let rows = t.slice_rows(v[0], 1, 2);
        let cols = t.slice_cols(rows, 1, 3);
        let sq = t.mul(cols, cols);
        t.sum(sq)
    });
}

#[test]
fn fd_means_and_row_const() {
    assert_grads_ok(&[(fill(39, 12), vec![3, 4])], |t, v| {
        let m0 = t.mean_axis0(v[0]);
        let m1 = t.mean_axis1(v[0]);
        let masked = t.add_row_const(v[0], &[0.0, -1.0, 0.5, 0.0]);
        let s0 = t.sum(m0);
        let s1 = t.sum(m1);
        let sm = t.sum(masked);
        let s0q = t.mul(s0, s0);
        let a = t.add(s0q, s1);
        let smq = t.scale(sm, 0.21);
        t.add(a, smq)
    });
}

#[test]
fn fd_cross_entropy() {
    assert_grads_ok(&[(fill(40, 12), vec![4, 3])], |t, v| {
        let (loss, _) = t.cross_entropy(v[0], &[0, 2, -1, 1]);
        loss
    });
}

#[test]
fn fd_span_means() {
    let spans = [
        Some((0usize, 0usize, 3usize)),
        None,
        Some((1, 2, 6)),
        Some((0, 4, 5)),
    ];
    assert_grads_ok(&[(fill(41, 12), vec![2, 1, 6])], |t, v| {
        let s = t.span_means(v[0], &spans);
        let sq = t.mul(s, s);
        t.sum(sq)
    });
}

#[test]
fn fd_conv_layout_and_masked_mean() {
    let mask = vec![vec![1u8, 1, 0], vec![1, 0, 0]];
    assert_grads_ok(&[(fill(42, 12), vec![6, 2])], |t, v| {
        let conv = t.rows_to_conv_layout(v[0], 2);
        let m = t.masked_mean_length(conv, &mask);
        let sq = t.mul(m, m);
        t.sum(sq)
    });
}

#[test]
fn fd_dropout_with_frozen_mask() {
    // The same seed reproduces the same mask on every FD evaluation.
    assert_grads_ok(&[(fill(43, 10), vec![2, 5])], |t, v| {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let d = t.dropout(v[0], 0.4, true, &mut rng);
        let sq = t.mul(d, d);
        t.sum(sq)
    });
}

#[test]
fn fd_concat_rows_cols_pad() {
    assert_grads_ok(
        &[(fill(50, 6), vec![2, 3]), (fill(51, 3), vec![1, 3])],
        |t, v| {
            let rows = t.concat_rows(&[v[0], v[1]]);
            let rt = t.transpose2d(rows);
            let cols = t.concat_cols(&[rt, rt]);
            let sq = t.mul(cols, cols);
            t.sum(sq)
        },
    );
    assert_grads_ok(&[(fill(52, 8), vec![1, 2, 4])], |t, v| {
        let p = t.pad_length(v[0], 3);
        let sq = t.mul(p, p);
        t.sum(sq)
    });
}

#[test]
fn fd_span_max() {
    // Values spread apart so argmax is stable under the probe epsilon.
    let x: Vec<f64> = (0..12).map(|i| (i as f64 * 0.917).sin() * 3.0).collect();
    let spans = [Some((0usize, 0usize, 4usize)), None, Some((1, 1, 6))];
    assert_grads_ok(&[(x, vec![2, 1, 6])], |t, v| {
        let s = t.span_max(v[0], &spans);
        let sq = t.mul(s, s);
        t.sum(sq)
    });
}

#[test]
fn fd_reshape() {
    assert_grads_ok(&[(fill(44, 12), vec![3, 4])], |t, v| {
        let r = t.reshape(v[0], &[2, 6]);
        let sq = t.mul(r, r);
        t.sum(sq)
    });
}

#[test]
fn dropout_eval_mode_is_identity() {
    let mut tape: Tape<f64> = Tape::new();
    let x = tape.input(fill(45, 6), &[2, 3]);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let y = tape.dropout(x, 0.5, false, &mut rng);
    assert_eq!(x, y);
}

#[test]
#[should_panic(expected = "shape mismatch")]
fn mismatched_add_panics_with_both_shapes() {
    let mut tape: Tape<f64> = Tape::new();
    let a = tape.constant(vec![0.0; 6], &[2, 3]);
    let b = tape.constant(vec![0.0; 6], &[3, 2]);
    let _ = tape.add(a, b);
}

#[test]
fn determinism_same_seed_same_params() {
    let build = || {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut store: ParamStore<f32> = ParamStore::new();
        store.add("w", &[8, 4], Init::Normal(0.02), true, &mut rng);
        store.add("b", &[4], Init::Zeros, true, &mut rng);
        let mut adam = AdamStateAlias::new(&store, 1e-2);
        for step in 0..10u64 {
            let mut tape: Tape<f32> = Tape::new();
            let x = tape.constant_f64(&fill(step, 16), &[2, 8]);
            let w = tape.by_name(&store, "w");
            let b = tape.by_name(&store, "b");
            let h = tape.matmul(x, w);
            let h = tape.add_bias_row(h, b);
            let (loss, _) = tape.cross_entropy(h, &[1, 3]);
            tape.backward(loss, &mut store);
            adam.step(&mut store);
        }
        store
            .iter()
            .flat_map(|p| p.value.iter().map(|v| v.to_bits()))
            .collect::<Vec<u32>>()
    };
    assert_eq!(build(), build());
}

type AdamStateAlias = super::AdamState<f32>;
