mod common;

use common::{max_grad_error, project, random_tensor, seeded};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use ravenforge::tensor::{Mode, RunningStats, Tape, Tensor};

fn conv_out(h: usize, k: usize, s: usize, p: usize) -> usize {
    (h + 2 * p - k) / s + 1
}

#[test]
fn identity_kernel_conv_is_identity() {
    let x = Tensor::<f32>::new(vec![1, 1, 4, 4], (0..16).map(|i| i as f32).collect()).unwrap();
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let w = tape.constant(Tensor::full(&[1, 1, 1, 1], 1.0));
    let b = tape.constant(Tensor::zeros(&[1]));
    let y = tape.conv2d(xv, w, b, 1, 0).unwrap();
    assert_eq!(tape.value(y).data(), x.data());
    let yt = tape.conv_transpose2d(xv, w, b, 1, 0, 0).unwrap();
    assert_eq!(tape.value(yt).data(), x.data());
}

#[test]
fn encoder_and_decoder_layer_shapes() {
    assert_eq!(conv_out(80, 3, 2, 1), 40);
    let mut tape = Tape::<f32>::new();
    let x = tape.constant(Tensor::zeros(&[1, 1, 80, 80]));
    let w = tape.constant(Tensor::zeros(&[32, 1, 3, 3]));
    let b = tape.constant(Tensor::zeros(&[32]));
    let y = tape.conv2d(x, w, b, 2, 1).unwrap();
    assert_eq!(tape.shape(y), &[1, 32, 40, 40]);

    let x = tape.constant(Tensor::zeros(&[1, 32, 40, 40]));
    let w = tape.constant(Tensor::zeros(&[32, 1, 3, 3]));
    let b = tape.constant(Tensor::zeros(&[1]));
    let y = tape.conv_transpose2d(x, w, b, 2, 1, 1).unwrap();
    assert_eq!(tape.shape(y), &[1, 1, 80, 80]);
}

#[test]
fn conv_and_transpose_are_adjoint() {
    let mut rng = seeded(11);
    for (s, p, h) in [(1, 0, 6), (2, 1, 9), (2, 1, 8), (3, 1, 10)] {
        let x = random_tensor(&[2, 3, h, h], &mut rng);
        let w = random_tensor(&[4, 3, 3, 3], &mut rng);
        let oh = conv_out(h, 3, s, p);
        let y = random_tensor(&[2, 4, oh, oh], &mut rng);
        // conv_transpose must recover the original extent.
        let op = h - ((oh - 1) * s + 3 - 2 * p);
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let wv = tape.constant(w);
        let b_out = tape.constant(Tensor::zeros(&[4]));
        let b_in = tape.constant(Tensor::zeros(&[3]));
        let yv = tape.constant(y.clone());
        let cx = tape.conv2d(xv, wv, b_out, s, p).unwrap();
        let ty = tape.conv_transpose2d(yv, wv, b_in, s, p, op).unwrap();
        assert_eq!(tape.shape(ty), x.shape());
        let lhs: f64 = tape.value(cx).data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(tape.value(ty).data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() / lhs.abs().max(1e-12) < 1e-5, "stride {s}: {lhs} vs {rhs}");
    }
}

#[test]
fn conv2d_gradient_matches_finite_differences() {
    let mut rng = seeded(3);
    let inputs = vec![
        random_tensor(&[2, 2, 5, 5], &mut rng),
        random_tensor(&[3, 2, 3, 3], &mut rng),
        random_tensor(&[3], &mut rng),
    ];
    let err = max_grad_error(inputs, |t, v| {
        let y = t.conv2d(v[0], v[1], v[2], 2, 1).unwrap();
        project(t, y, 99)
    });
    assert!(err < 1e-6, "max relative error {err}");
}

#[test]
fn batch_norm_zero_input_gives_zero_output() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::zeros(&[4, 3, 2, 2]));
    let g = tape.constant(Tensor::full(&[3], 1.0));
    let b = tape.constant(Tensor::zeros(&[3]));
    let (mut m, mut v) = (vec![0.0; 3], vec![1.0; 3]);
    let y = tape
        .batch_norm2d(x, g, b, RunningStats { mean: &mut m, var: &mut v }, Mode::Train, 0.1, 1e-5)
        .unwrap();
    assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
}

#[test]
fn batch_norm_train_output_is_standardized_and_updates_running_stats() {
    let mut rng = seeded(5);
    let x = random_tensor(&[6, 2, 3, 3], &mut rng);
    let mut tape = Tape::<f64>::new();
    let xv = tape.constant(x.clone());
    let g = tape.constant(Tensor::full(&[2], 1.0));
    let b = tape.constant(Tensor::zeros(&[2]));
    let (mut m, mut v) = (vec![0.0; 2], vec![1.0; 2]);
    let y = tape
        .batch_norm2d(xv, g, b, RunningStats { mean: &mut m, var: &mut v }, Mode::Train, 0.1, 1e-5)
        .unwrap();
    let out = tape.value(y).data();
    for c in 0..2 {
        let vals: Vec<f64> = (0..6).flat_map(|n| out[(n * 2 + c) * 9..(n * 2 + c + 1) * 9].to_vec()).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        assert!(mean.abs() < 1e-4);
        assert!((var - 1.0).abs() < 1e-4);

        let raw: Vec<f64> = (0..6).flat_map(|n| x.data()[(n * 2 + c) * 9..(n * 2 + c + 1) * 9].to_vec()).collect();
        let rm = raw.iter().sum::<f64>() / raw.len() as f64;
        assert!((m[c] - 0.1 * rm).abs() < 1e-12);
    }
}

#[test]
fn batch_norm_gradients_match_finite_differences() {
    for mode in [Mode::Train, Mode::Eval] {
        let mut rng = seeded(7);
        let inputs = vec![
            random_tensor(&[3, 2, 3, 3], &mut rng),
            random_tensor(&[2], &mut rng),
            random_tensor(&[2], &mut rng),
        ];
        let err = max_grad_error(inputs, move |t, v| {
            let (mut m, mut var) = (vec![0.1, -0.2], vec![0.5, 1.5]);
            let y = t
                .batch_norm2d(v[0], v[1], v[2], RunningStats { mean: &mut m, var: &mut var }, mode, 0.1, 1e-5)
                .unwrap();
            project(t, y, 17)
        });
        assert!(err < 1e-5, "{mode:?}: max relative error {err}");
    }
}

#[test]
fn dense_activation_and_softmax_gradients() {
    let mut rng = seeded(9);
    let inputs = vec![
        random_tensor(&[4, 5], &mut rng),
        random_tensor(&[5, 3], &mut rng),
        random_tensor(&[3], &mut rng),
    ];
    let err = max_grad_error(inputs, |t, v| {
        let h = t.dense(v[0], v[1], v[2]).unwrap();
        let a = t.relu(h).unwrap();
        let s = t.sigmoid(a).unwrap();
        let e = t.exp(s).unwrap();
        let p = t.softmax(e, 1).unwrap();
        project(t, p, 4)
    });
    assert!(err < 1e-5, "max relative error {err}");
}

#[test]
fn cross_entropy_and_indexing_gradients() {
    let mut rng = seeded(13);
    let inputs = vec![random_tensor(&[6, 4], &mut rng), random_tensor(&[3, 4], &mut rng)];
    let err = max_grad_error(inputs, |t, v| {
        let pairs = t.gather_rows(v[0], &[0, 5, 2, 2, 4, 1]).unwrap();
        let other = t.gather_rows(v[1], &[0, 1, 2, 0, 1, 2]).unwrap();
        let cat = t.concat_cols(pairs, other).unwrap();
        let seg = t.segment_sum(cat, &[0, 1, 2, 0, 1, 2], 3).unwrap();
        let sc = t.scale(seg, 0.5).unwrap();
        t.cross_entropy(sc, &[3, 0, 7]).unwrap()
    });
    assert!(err < 1e-5, "max relative error {err}");
}

#[test]
fn dropout_gradient_uses_the_sampled_mask() {
    let mut rng = seeded(21);
    let inputs = vec![random_tensor(&[5, 6], &mut rng)];
    let err = max_grad_error(inputs, |t, v| {
        let mut r = ChaCha8Rng::seed_from_u64(8);
        let d = t.dropout(v[0], 0.5, Mode::Train, &mut r).unwrap();
        project(t, d, 2)
    });
    assert!(err < 1e-6, "max relative error {err}");
}

#[test]
fn dropout_training_mean_is_preserved() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let x = Tensor::<f64>::from_slice(&[4], &[1.0, -2.0, 0.5, 3.0]).unwrap();
    let mut sums = [0.0f64; 4];
    let trials = 100_000;
    for _ in 0..trials {
        let mut tape = Tape::new();
        let v = tape.constant(x.clone());
        let d = tape.dropout(v, 0.5, Mode::Train, &mut rng).unwrap();
        for (s, &y) in sums.iter_mut().zip(tape.value(d).data()) {
            *s += y;
        }
    }
    for (s, &want) in sums.iter().zip(x.data()) {
        let mean = s / trials as f64;
        assert!((mean - want).abs() <= 0.01 * want.abs(), "mean {mean} vs {want}");
    }
}

#[test]
fn forward_passes_are_deterministic() {
    let run = || {
        let mut rng = seeded(1);
        let x = random_tensor(&[2, 1, 8, 8], &mut rng).cast::<f32>();
        let w = random_tensor(&[4, 1, 3, 3], &mut rng).cast::<f32>();
        let mut tape = Tape::<f32>::new();
        let xv = tape.leaf(x.trainable());
        let wv = tape.leaf(w.trainable());
        let b = tape.constant(Tensor::zeros(&[4]));
        let y = tape.conv2d(xv, wv, b, 2, 1).unwrap();
        let mut drop_rng = seeded(2);
        let d = tape.dropout(y, 0.3, Mode::Train, &mut drop_rng).unwrap();
        let s = tape.sum_all(d).unwrap();
        let g = tape.backward(s).unwrap();
        (tape.value(d).data().to_vec(), g.get(wv).unwrap().to_vec())
    };
    let (a, ga) = run();
    let (b, gb) = run();
    assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    assert!(ga.iter().zip(&gb).all(|(x, y)| x.to_bits() == y.to_bits()));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn conv_layers_gradients_on_random_shapes(
        n in 1usize..3, c in 1usize..3, o in 1usize..4, h in 3usize..7,
        s in 1usize..3, p in 0usize..2, seed in 0u64..1000,
    ) {
        let mut rng = seeded(seed);
        let inputs = vec![
            random_tensor(&[n, c, h, h], &mut rng),
            random_tensor(&[o, c, 3, 3], &mut rng),
            random_tensor(&[o], &mut rng),
        ];
        let err = max_grad_error(inputs, move |t, v| {
            let y = t.conv2d(v[0], v[1], v[2], s, p).unwrap();
            project(t, y, seed)
        });
        prop_assert!(err < 1e-5, "conv2d relative error {}", err);

        let inputs = vec![
            random_tensor(&[n, c, h, h], &mut rng),
            random_tensor(&[c, o, 3, 3], &mut rng),
            random_tensor(&[o], &mut rng),
        ];
        let op = if s > 1 { 1 } else { 0 };
        let err = max_grad_error(inputs, move |t, v| {
            let y = t.conv_transpose2d(v[0], v[1], v[2], s, p, op).unwrap();
            project(t, y, seed + 1)
        });
        prop_assert!(err < 1e-5, "conv_transpose2d relative error {}", err);
    }

    #[test]
    fn softmax_rows_sum_to_one_and_sigmoid_is_open_unit(vals in proptest::collection::vec(-30.0f32..30.0, 24)) {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::from_slice(&[3, 8], &vals).unwrap());
        let p = tape.softmax(x, 1).unwrap();
        for r in 0..3 {
            let s: f32 = tape.value(p).row(r).iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-6);
        }
        let small = tape.constant(Tensor::from_slice(&[24], &vals.iter().map(|v| v / 4.0).collect::<Vec<_>>()).unwrap());
        let sg = tape.sigmoid(small).unwrap();
        prop_assert!(tape.value(sg).data().iter().all(|&v| v > 0.0 && v < 1.0));
    }
}
