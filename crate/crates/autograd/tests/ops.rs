use pitch_autograd::nn::{AttentionGate, Mode, ParamStore, Session};
use pitch_autograd::optim::{Adam, AdamConfig};
use pitch_autograd::{
    finite_diff_check, finite_diff_check_with_reference, GradCheckConfig, GradCheckReport, Tape, Tensor, TensorError,
};
use pitch_autograd::suite::{case_inputs, encoder_block, encoder_block_inputs, loss_weights, op_cases, random};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Direct nested-loop convolution, independent of the im2col path.
fn conv_oracle(x: &Tensor<f64>, w: &Tensor<f64>, b: &[f64]) -> Vec<f64> {
    let (cin, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (cout, kh, kw) = (w.shape()[0], w.shape()[2], w.shape()[3]);
    let (ho, wo) = (h - kh + 1, wd - kw + 1);
    let mut out = vec![0.0; cout * ho * wo];
    for co in 0..cout {
        for i in 0..ho {
            for j in 0..wo {
                let mut acc = b[co];
                for ci in 0..cin {
                    for ki in 0..kh {
                        for kj in 0..kw {
                            acc += x.data()[ci * h * wd + (i + ki) * wd + j + kj]
                                * w.data()[((co * cin + ci) * kh + ki) * kw + kj];
                        }
                    }
                }
                out[co * ho * wo + i * wo + j] = acc;
            }
        }
    }
    out
}

#[test]
fn pad_zero_is_identity_and_single_cell_replicates() {
    let mut tape = Tape::<f32>::new(false);
    let x = tape.leaf(random(&[2, 3, 4], 1), false);
    let y = tape.replication_pad(x, 0).unwrap();
    assert_eq!(tape.value(x), tape.value(y));

    let one = tape.leaf(Tensor::new(vec![1, 1, 1], vec![7.0]).unwrap(), false);
    let padded = tape.replication_pad(one, 2).unwrap();
    assert_eq!(tape.shape(padded), &[1, 5, 5]);
    assert!(tape.value(padded).data().iter().all(|&v| v == 7.0));
}

#[test]
fn pad_corner_gradient_counts_replicated_fan_in() {
    let mut tape = Tape::<f64>::new(true);
    let x = tape.leaf(random(&[2, 6, 6], 2), true);
    let y = tape.replication_pad(x, 2).unwrap();
    let s = tape.sum(y).unwrap();
    tape.backward(s).unwrap();
    let g = tape.grad(x).unwrap();
    for c in 0..2 {
        for &(i, j) in &[(0, 0), (0, 5), (5, 0), (5, 5)] {
            assert_eq!(g[c * 36 + i * 6 + j], 9.0);
        }
        // edge (non-corner) cells replicate outward 2 times + themselves
        assert_eq!(g[c * 36 + 2], 3.0);
        assert_eq!(g[c * 36 + 2 * 6 + 2], 1.0);
    }
}

#[test]
fn pad_rejects_bad_rank() {
    let mut tape = Tape::<f32>::new(false);
    let x = tape.leaf(Tensor::zeros(vec![4, 4]), false);
    assert!(matches!(tape.replication_pad(x, 1), Err(TensorError::Rank { .. })));
}

#[test]
fn conv_identity_and_bias_only() {
    let mut tape = Tape::<f32>::new(false);
    let x = tape.leaf(random(&[1, 3, 3], 3), false);
    let w = tape.leaf(Tensor::full(vec![1, 1, 1, 1], 1.0), false);
    let b = tape.leaf(Tensor::zeros(vec![1]), false);
    let y = tape.conv2d(x, w, Some(b)).unwrap();
    assert_eq!(tape.value(y).data(), tape.value(x).data());

    let wz = tape.leaf(Tensor::zeros(vec![2, 1, 3, 3]), false);
    let bb = tape.leaf(Tensor::new(vec![2], vec![0.5, -1.25]).unwrap(), false);
    let y = tape.conv2d(x, wz, Some(bb)).unwrap();
    assert_eq!(tape.value(y).data(), &[0.5, -1.25]);
}

#[test]
fn conv_matches_direct_loop_oracle() {
    let x64 = random::<f64>(&[3, 8, 8], 4);
    let w64 = random::<f64>(&[4, 3, 5, 5], 5);
    let b64 = loss_weights::<f64>(4, 6);
    let want = conv_oracle(&x64, &w64, &b64);

    let mut tape = Tape::<f32>::new(false);
    let x = tape.leaf(x64.cast(), false);
    let w = tape.leaf(w64.cast(), false);
    let b = tape.leaf(Tensor::new(vec![4], b64.iter().map(|&v| v as f32).collect()).unwrap(), false);
    let y = tape.conv2d(x, w, Some(b)).unwrap();
    assert_eq!(tape.shape(y), &[4, 4, 4]);
    for (got, want) in tape.value(y).data().iter().zip(&want) {
        assert!((*got as f64 - want).abs() < 1e-5, "{got} vs {want}");
    }
}

#[test]
fn conv_rejects_channel_mismatch() {
    let mut tape = Tape::<f32>::new(false);
    let x = tape.leaf(Tensor::zeros(vec![2, 5, 5]), false);
    let w = tape.leaf(Tensor::zeros(vec![1, 3, 5, 5]), false);
    assert!(matches!(tape.conv2d(x, w, None), Err(TensorError::ShapeMismatch { .. })));
}

#[test]
fn conv_bias_gradient_is_one_per_output_cell() {
    let mut tape = Tape::<f64>::new(true);
    let x = tape.leaf(Tensor::zeros(vec![1, 2, 6, 6]), false);
    let w = tape.leaf(random(&[3, 2, 5, 5], 7), true);
    let b = tape.leaf(Tensor::full(vec![3], 0.3), true);
    let y = tape.conv2d(x, w, Some(b)).unwrap();
    let s = tape.sum(y).unwrap();
    tape.backward(s).unwrap();
    // 2x2 output cells per channel
    assert_eq!(tape.grad(b).unwrap(), &[4.0, 4.0, 4.0]);
}

fn bn_params(c: usize, gamma: f64, beta: f64) -> (Tensor<f64>, Tensor<f64>) {
    (Tensor::full(vec![c], gamma), Tensor::full(vec![c], beta))
}

#[test]
fn batch_norm_constant_channels_give_zero() {
    let mut tape = Tape::<f64>::new(false);
    let data: Vec<f64> = (0..2 * 2 * 9).map(|i| if (i / 9) % 2 == 0 { 3.0 } else { -1.5 }).collect();
    let x = tape.leaf(Tensor::new(vec![2, 2, 3, 3], data).unwrap(), false);
    let (g, b) = bn_params(2, 1.0, 0.0);
    let (g, b) = (tape.leaf(g, false), tape.leaf(b, false));
    let (y, _) = tape.batch_norm_train(x, g, b, 1e-5).unwrap();
    assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
}

#[test]
fn batch_norm_zero_scale_gives_shift() {
    let mut tape = Tape::<f64>::new(false);
    let x = tape.leaf(random(&[3, 2, 3, 3], 8), false);
    let (g, b) = bn_params(2, 0.0, 0.75);
    let (g, b) = (tape.leaf(g, false), tape.leaf(b, false));
    let (y, _) = tape.batch_norm_train(x, g, b, 1e-5).unwrap();
    assert!(tape.value(y).data().iter().all(|&v| v == 0.75));
}

#[test]
fn batch_norm_output_moments() {
    let mut tape = Tape::<f64>::new(false);
    let x = tape.leaf(random(&[4, 2, 3, 3], 9), false);
    let (g, b) = bn_params(2, 1.0, 0.0);
    let (g, b) = (tape.leaf(g, false), tape.leaf(b, false));
    let (y, _) = tape.batch_norm_train(x, g, b, 1e-5).unwrap();
    let ys = tape.value(y).data();
    for c in 0..2 {
        let vals: Vec<f64> = (0..4).flat_map(|n| ys[(n * 2 + c) * 9..(n * 2 + c + 1) * 9].to_vec()).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        assert!(mean.abs() < 1e-6);
        assert!((var - 1.0).abs() < 1e-4);
    }
}

#[test]
fn batch_norm_train_needs_two_samples() {
    let mut tape = Tape::<f64>::new(false);
    let x = tape.leaf(random(&[1, 2, 3, 3], 9), false);
    let (g, b) = bn_params(2, 1.0, 0.0);
    let (g, b) = (tape.leaf(g, false), tape.leaf(b, false));
    assert!(tape.batch_norm_train(x, g, b, 1e-5).is_err());
}

#[test]
fn leaky_relu_values_and_slopes() {
    let mut tape = Tape::<f64>::new(true);
    let x = tape.leaf(Tensor::new(vec![4], vec![2.0, -2.0, -3.0, 0.0]).unwrap(), true);
    let y = tape.leaky_relu(x, 0.1).unwrap();
    assert_eq!(tape.value(y).data()[0], 2.0);
    assert!((tape.value(y).data()[1] + 0.2).abs() < 1e-15);
    let s = tape.sum(y).unwrap();
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[1.0, 0.1, 0.1, 0.1]);
}

#[test]
fn max_pool_values_ties_and_shapes() {
    let mut tape = Tape::<f64>::new(true);
    let x = tape.leaf(Tensor::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap(), false);
    let y = tape.max_pool_2x2(x).unwrap();
    assert_eq!(tape.value(y).data(), &[4.0]);

    let c = tape.leaf(Tensor::full(vec![1, 4, 4], 1.5), true);
    let y = tape.max_pool_2x2(c).unwrap();
    assert!(tape.value(y).data().iter().all(|&v| v == 1.5));
    let s = tape.sum(y).unwrap();
    tape.backward(s).unwrap();
    let g = tape.grad(c).unwrap();
    let hot: Vec<usize> = g.iter().enumerate().filter(|(_, &v)| v != 0.0).map(|(i, _)| i).collect();
    assert_eq!(hot, vec![0, 2, 8, 10]);

    let mut tape = Tape::<f32>::new(false);
    let big = tape.leaf(Tensor::zeros(vec![1, 104, 68]), false);
    let y = tape.max_pool_2x2(big).unwrap();
    assert_eq!(tape.shape(y), &[1, 52, 34]);
    let y = tape.max_pool_2x2(y).unwrap();
    assert_eq!(tape.shape(y), &[1, 26, 17]);
    assert!(tape.max_pool_2x2(y).is_err());
}

#[test]
fn upsample_duplicates_and_shapes() {
    let mut tape = Tape::<f64>::new(false);
    let x = tape.leaf(Tensor::new(vec![1, 1, 1], vec![3.0]).unwrap(), false);
    let y = tape.upsample_2x(x).unwrap();
    assert_eq!(tape.shape(y), &[1, 2, 2]);
    assert!(tape.value(y).data().iter().all(|&v| v == 3.0));

    let r = tape.leaf(random(&[2, 3, 5], 10), false);
    let up = tape.upsample_2x(r).unwrap();
    let avg: Vec<f64> = {
        let u = tape.value(up).data();
        let mut out = Vec::new();
        for c in 0..2 {
            for i in 0..3 {
                for j in 0..5 {
                    let at = |a: usize, b: usize| u[c * 60 + (2 * i + a) * 10 + 2 * j + b];
                    out.push((at(0, 0) + at(0, 1) + at(1, 0) + at(1, 1)) / 4.0);
                }
            }
        }
        out
    };
    assert_eq!(avg, tape.value(r).data());

    let b = tape.leaf(Tensor::zeros(vec![1, 26, 17]), false);
    let ub = tape.upsample_2x(b).unwrap();
    assert_eq!(tape.shape(ub), &[1, 52, 34]);
}

fn gate_with_psi_bias(bias: f32) -> (Tensor<f32>, Tensor<f32>) {
    let mut store = ParamStore::<f32>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let gate = AttentionGate::new(&mut store, "att", 3, 2, 0.1, &mut rng);
    store.get_mut(gate.psi.weight).value.data_mut().fill(0.0);
    store.get_mut(gate.psi.bias).value.data_mut().fill(bias);
    let skip: Tensor<f32> = random(&[1, 3, 4, 4], 12);
    let g: Tensor<f32> = random(&[1, 2, 4, 4], 13);
    let mut s = Session::new(&store, Mode::Train, false).unwrap();
    let sv = s.input(skip.clone(), false);
    let gv = s.input(g, false);
    let out = gate.forward(&mut s, sv, gv).unwrap();
    (skip, s.tape.value(out).clone())
}

#[test]
fn attention_gate_saturates() {
    let (skip, open) = gate_with_psi_bias(20.0);
    for (a, b) in open.data().iter().zip(skip.data()) {
        assert!((a - b).abs() < 1e-6);
    }
    let (_, shut) = gate_with_psi_bias(-20.0);
    assert!(shut.data().iter().all(|v| v.abs() < 1e-6));
}

#[test]
fn attention_gate_rejects_spatial_mismatch() {
    let mut store = ParamStore::<f32>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let gate = AttentionGate::new(&mut store, "att", 2, 2, 0.1, &mut rng);
    let mut s = Session::new(&store, Mode::Train, false).unwrap();
    let a = s.input(Tensor::zeros(vec![1, 2, 4, 4]), false);
    let b = s.input(Tensor::zeros(vec![1, 2, 2, 2]), false);
    assert!(gate.forward(&mut s, a, b).is_err());
}

#[test]
fn spatial_softmax_cases() {
    let mut tape = Tape::<f64>::new(false);
    let u = tape.leaf(Tensor::full(vec![1, 104, 68], 0.3), false);
    let p = tape.spatial_softmax(u, 1.0).unwrap();
    let cell = 1.0 / (104.0 * 68.0);
    assert!(tape.value(p).data().iter().all(|&v| (v - cell).abs() < 1e-15));

    let l = tape.leaf(Tensor::new(vec![1, 2, 2], vec![10.0, 0.0, 0.0, 0.0]).unwrap(), false);
    let p = tape.spatial_softmax(l, 1.0).unwrap();
    let e10 = 10f64.exp();
    let want = [e10 / (e10 + 3.0), 1.0 / (e10 + 3.0), 1.0 / (e10 + 3.0), 1.0 / (e10 + 3.0)];
    for (a, b) in tape.value(p).data().iter().zip(&want) {
        assert!((a - b).abs() < 1e-15);
    }
    assert!(tape.value(p).data()[0] > 0.9998);

    let hot = tape.spatial_softmax(l, 2.0).unwrap();
    let e5 = 5f64.exp();
    assert!((tape.value(hot).data()[0] - e5 / (e5 + 3.0)).abs() < 1e-15);
    assert!(tape.spatial_softmax(l, 0.0).is_err());
}

#[test]
fn adam_zero_gradient_and_first_step() {
    let mut store = ParamStore::<f64>::new();
    let id = store.add("w", Tensor::new(vec![3], vec![0.5, -0.5, 1.0]).unwrap(), true);
    let mut adam = Adam::new(&store, AdamConfig::default());
    adam.step(&mut store, &[(id, vec![0.0; 3])], 1e-3).unwrap();
    assert_eq!(store.get(id).value.data(), &[0.5, -0.5, 1.0]);

    let mut store = ParamStore::<f64>::new();
    let id = store.add("w", Tensor::new(vec![3], vec![0.5, -0.5, 1.0]).unwrap(), true);
    let mut adam = Adam::new(&store, AdamConfig::default());
    let lr = 1e-2;
    adam.step(&mut store, &[(id, vec![0.3, -2.0, 1e-3])], lr).unwrap();
    let after = store.get(id).value.data();
    let deltas = [after[0] - 0.5, after[1] + 0.5, after[2] - 1.0];
    let signs = [-1.0, 1.0, -1.0];
    for (d, s) in deltas.iter().zip(signs) {
        // |g| / (|g| + eps) with eps = 1e-7
        assert!((d - s * lr).abs() < lr * 1e-3, "{d}");
    }
    assert_eq!(adam.step_count(), 1);
}

#[test]
fn adam_rejects_nan_with_parameter_name() {
    let mut store = ParamStore::<f32>::new();
    let id = store.add("enc1.conv1.weight", Tensor::zeros(vec![2]), true);
    let mut adam = Adam::new(&store, AdamConfig::default());
    let err = adam.step(&mut store, &[(id, vec![1.0, f32::NAN])], 1e-3).unwrap_err();
    match err {
        TensorError::NonFiniteGradient { name } => assert_eq!(name, "enc1.conv1.weight"),
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(adam.step_count(), 0);
    assert_eq!(store.get(id).value.data(), &[0.0, 0.0]);
}

#[test]
fn adam_is_deterministic() {
    let run = || {
        let mut store = ParamStore::<f32>::new();
        let id = store.add("w", random(&[16], 20), true);
        let mut adam = Adam::new(&store, AdamConfig::default());
        for k in 0..2 {
            let g: Vec<f32> = loss_weights(16, 30 + k);
            adam.step(&mut store, &[(id, g)], 1e-3).unwrap();
        }
        let (m, v) = adam.moments(id);
        (store.get(id).value.data().to_vec(), m.to_vec(), v.to_vec())
    };
    let (a, b) = (run(), run());
    let bits = |xs: &[f32]| xs.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a.0), bits(&b.0));
    assert_eq!(bits(&a.1), bits(&b.1));
    assert_eq!(bits(&a.2), bits(&b.2));
}

fn assert_report(name: &str, precision: &str, report: &GradCheckReport, tol: f64) {
    assert!(
        report.max_rel_error < tol,
        "{name} ({precision}): rel err {} at {:?} (analytic {}, numeric {})",
        report.max_rel_error,
        report.worst,
        report.analytic,
        report.numeric
    );
    assert!(report.checked > 0, "{name}: nothing checked");
    assert!(report.skipped_fraction() < 0.05, "{name} ({precision}): {report:?}");
}

fn f64_config() -> GradCheckConfig {
    GradCheckConfig::for_element::<f64>()
}

#[test]
fn gradcheck_ops_f64() {
    for case in op_cases() {
        let report = finite_diff_check(&case_inputs::<f64>(&case), f64_config(), case.double).unwrap();
        assert_report(case.name, "f64", &report, 1e-5);
    }
}

#[test]
fn gradcheck_ops_f32_against_f64_differences() {
    for case in op_cases() {
        let report =
            finite_diff_check_with_reference(&case_inputs::<f32>(&case), f64_config(), case.single, case.double)
                .unwrap();
        assert_report(case.name, "f32", &report, 1e-2);
    }
}

#[test]
fn gradcheck_ops_f32_self_differences_on_well_scaled_ops() {
    // pure single-precision differences are round-off limited; these ops have
    // gradients large enough for the quotient to resolve them
    let cfg = GradCheckConfig::for_element::<f32>();
    for case in op_cases().into_iter().filter(|c| c.name != "conv2d") {
        let report = finite_diff_check(&case_inputs::<f32>(&case), cfg, case.single).unwrap();
        assert_report(case.name, "f32 self", &report, 1e-2);
    }
}

#[test]
fn linear_layer_gradient_within_1e4() {
    let case = &op_cases()[0];
    let report =
        finite_diff_check_with_reference(&case_inputs::<f32>(case), f64_config(), case.single, case.double).unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");
    let report = finite_diff_check(&case_inputs::<f64>(case), f64_config(), case.double).unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

#[test]
fn encoder_block_gradient_f64() {
    let report = finite_diff_check(&encoder_block_inputs::<f64>(), f64_config(), encoder_block::<f64>).unwrap();
    assert_report("encoder block", "f64", &report, 1e-5);
}

#[test]
fn encoder_block_gradient_f32() {
    let report = finite_diff_check_with_reference(
        &encoder_block_inputs::<f32>(),
        f64_config(),
        encoder_block::<f32>,
        encoder_block::<f64>,
    )
    .unwrap();
    assert_report("encoder block", "f32", &report, 1e-2);
}

#[test]
fn kink_crossings_are_skipped_not_scored() {
    // x sits 1e-7 from the LeakyReLU kink; a 1e-6 nudge crosses it
    let x = Tensor::new(vec![2], vec![1e-7, 0.5]).unwrap();
    let report = finite_diff_check(&[x], f64_config(), |tp, v| {
        let y = tp.leaky_relu(v[0], 0.1)?;
        tp.sum(y)
    })
    .unwrap();
    assert_eq!((report.checked, report.skipped), (1, 1));
    assert!(report.max_rel_error < 1e-9);
}

mod properties {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn pad_then_crop_is_identity(c in 1usize..3, h in 1usize..6, w in 1usize..6, pad in 0usize..4, seed in 0u64..1000) {
            let x = random::<f32>(&[c, h, w], seed);
            let mut tape = Tape::new(false);
            let v = tape.leaf(x.clone(), false);
            let y = tape.replication_pad(v, pad).unwrap();
            let ys = tape.value(y).data();
            let (ho, wo) = (h + 2 * pad, w + 2 * pad);
            for ch in 0..c {
                for i in 0..h {
                    for j in 0..w {
                        prop_assert_eq!(ys[ch * ho * wo + (i + pad) * wo + j + pad], x.data()[ch * h * w + i * w + j]);
                    }
                }
            }
        }

        #[test]
        fn softmaxes_sum_to_one(h in 1usize..9, w in 1usize..9, t in 0.1f64..2.0, seed in 0u64..1000) {
            let mut tape = Tape::<f32>::new(false);
            let x = tape.leaf(random(&[1, 1, h, w], seed).map_scale(8.0), false);
            let p = tape.spatial_softmax(x, t).unwrap();
            let total: f64 = tape.value(p).data().iter().map(|&v| v as f64).sum();
            prop_assert!((total - 1.0).abs() < 1e-6);

            let x3 = tape.leaf(random(&[1, 3, h, w], seed + 1).map_scale(8.0), false);
            let p3 = tape.channel_softmax(x3, t).unwrap();
            let ps = tape.value(p3).data();
            for cell in 0..h * w {
                let s: f64 = (0..3).map(|c| ps[c * h * w + cell] as f64).sum();
                prop_assert!((s - 1.0).abs() < 1e-6);
            }
        }

        #[test]
        fn adam_with_zero_lr_is_identity(seed in 0u64..1000) {
            let mut store = ParamStore::<f32>::new();
            let start = random::<f32>(&[8], seed);
            let id = store.add("w", start.clone(), true);
            let mut adam = Adam::new(&store, AdamConfig::default());
            adam.step(&mut store, &[(id, loss_weights(8, seed + 7))], 0.0).unwrap();
            prop_assert_eq!(store.get(id).value.data(), start.data());
        }
    }

    trait MapScale {
        fn map_scale(self, k: f32) -> Self;
    }

    impl MapScale for Tensor<f32> {
        fn map_scale(mut self, k: f32) -> Self {
            self.data_mut().iter_mut().for_each(|v| *v *= k);
            self
        }
    }
}

#[test]
fn channel_scale_multiplies_each_plane() {
    let mut tape = Tape::<f64>::new(false);
    let x = tape.leaf(Tensor::from_fn(vec![2, 2, 1, 2], |i| i as f64 + 1.0), false);
    let y = tape.channel_scale(x, &[10.0, -1.0]).unwrap();
    assert_eq!(tape.value(y).data(), &[10.0, 20.0, -3.0, -4.0, 50.0, 60.0, -7.0, -8.0]);
    assert!(tape.channel_scale(x, &[1.0]).is_err());
}

#[test]
fn library_suite_covers_every_case_in_both_precisions() {
    let entries = pitch_autograd::suite::run_op_suite().unwrap();
    assert_eq!(entries.len(), 2 * (op_cases().len() + 1));
    for e in &entries {
        assert!(e.passed(), "{} ({}): {:?}", e.name, e.precision, e.report);
    }
}
