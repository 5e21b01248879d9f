use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use restorer::gradcheck::{check_gradients, random_projection, GradCheck};
use restorer::{ConvOptions, Error, Tape, Tensor};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn randn(shape: &[usize], seed: u64) -> Tensor {
    Tensor::randn(shape.to_vec(), 1.0, &mut rng(seed)).unwrap()
}

fn close(a: &[f64], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(b) {
        assert!((x - y).abs() <= tol, "{x} vs {y}");
    }
}

#[test]
fn matmul_identity_cases() {
    let tape = Tape::no_grad();
    let b = randn(&[3, 5], 1);
    let out = tape.matmul(tape.constant(&Tensor::eye(3).unwrap()), tape.constant(&b)).unwrap();
    assert!(tape.value(out).bit_eq(&b));

    let a = Tensor::new([2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let out = tape.matmul(tape.constant(&a), tape.constant(&Tensor::eye(2).unwrap())).unwrap();
    assert_eq!(tape.value(out).data(), &[1.0, 2.0, 3.0, 4.0]);
}

#[test]
fn matmul_mismatch_reports_both_shapes() {
    let tape = Tape::no_grad();
    let a = tape.constant(&Tensor::zeros([2, 3]).unwrap());
    let b = tape.constant(&Tensor::zeros([4, 2]).unwrap());
    let err = tape.matmul(a, b).unwrap_err();
    let msg = err.to_string();
    assert!(matches!(err, Error::Shape { .. }));
    assert!(msg.contains("[2, 3]") && msg.contains("[4, 2]"), "{msg}");
}

#[test]
fn matmul_sum_gradient() {
    let report = check_gradients(
        |t, v| {
            let p = t.matmul(v[0], v[1])?;
            t.sum(p)
        },
        &[randn(&[4, 4], 2), randn(&[4, 4], 3)],
        &GradCheck::default(),
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-6, "{report:?}");
}

#[test]
fn softmax_examples() {
    let tape = Tape::no_grad();
    let sm = |v: Vec<f64>| {
        let n = v.len();
        let x = tape.constant(&Tensor::new([n], v).unwrap());
        tape.value(tape.softmax(x).unwrap()).into_vec()
    };
    close(&sm(vec![0.0, 0.0, 0.0]), &[1.0 / 3.0; 3], 1e-15);
    close(&sm(vec![1000.0, 1000.0]), &[0.5, 0.5], 1e-15);
    let e = (-6.0f64).exp();
    let want = [e / (1.0 + e), 1.0 / (1.0 + e)];
    close(&sm(vec![-6.0, 0.0]), &want, 1e-12);
    close(&sm(vec![-6.0, 0.0]), &[0.002473, 0.997527], 1e-6);
}

#[test]
fn softmax_nan_is_numeric_error() {
    let tape = Tape::no_grad();
    let x = Tensor::new([2], vec![f64::NAN, 0.0]).unwrap();
    let err = tape.softmax(tape.constant(&x)).unwrap_err();
    assert!(matches!(err, Error::Numeric { .. }), "{err:?}");
}

#[test]
fn layer_norm_examples() {
    let tape = Tape::no_grad();
    let g = tape.constant(&Tensor::ones([2]).unwrap());
    let b = tape.constant(&Tensor::zeros([2]).unwrap());
    let x = tape.constant(&Tensor::new([2], vec![1.0, 3.0]).unwrap());
    close(tape.value(tape.layer_norm(x, g, b, 1e-12).unwrap()).data(), &[-1.0, 1.0], 1e-9);

    let g = tape.constant(&Tensor::ones([4]).unwrap());
    let b = tape.constant(&Tensor::zeros([4]).unwrap());
    let x = tape.constant(&Tensor::full([4], 7.5).unwrap());
    assert!(tape.value(tape.layer_norm(x, g, b, 1e-5).unwrap()).data().iter().all(|&v| v == 0.0));
}

#[test]
fn layer_norm_standardizes_slices() {
    let tape = Tape::no_grad();
    let x = randn(&[3, 16], 4);
    let g = tape.constant(&Tensor::ones([16]).unwrap());
    let b = tape.constant(&Tensor::zeros([16]).unwrap());
    let y = tape.value(tape.layer_norm(tape.constant(&x), g, b, 1e-12).unwrap());
    for row in y.data().chunks(16) {
        let m = row.iter().sum::<f64>() / 16.0;
        let v = row.iter().map(|r| (r - m).powi(2)).sum::<f64>() / 16.0;
        assert!(m.abs() < 1e-6 && (v - 1.0).abs() < 1e-6);
    }
}

#[test]
fn layer_norm_gradient() {
    let report = check_gradients(
        |t, v| {
            let y = t.layer_norm(v[0], v[1], v[2], 1e-5)?;
            random_projection(t, y, 11)
        },
        &[randn(&[2, 8], 5), randn(&[8], 6), randn(&[8], 7)],
        &GradCheck::default(),
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-5, "{report:?}");
}

#[test]
fn conv2d_identity_and_average() {
    let tape = Tape::no_grad();
    let x = randn(&[1, 5, 5], 8);
    let w = tape.constant(&Tensor::ones([1, 1, 1, 1]).unwrap());
    let y = tape.conv2d(tape.constant(&x), w, None, ConvOptions::new(1, 0)).unwrap();
    assert!(tape.value(y).bit_eq(&x));

    let c = Tensor::full([1, 6, 6], 2.5).unwrap();
    let w = tape.constant(&Tensor::full([1, 1, 3, 3], 1.0 / 9.0).unwrap());
    let y = tape.value(tape.conv2d(tape.constant(&c), w, None, ConvOptions::new(1, 0)).unwrap());
    assert_eq!(y.shape(), &[1, 4, 4]);
    close(y.data(), &[2.5; 16], 1e-12);
}

#[test]
fn conv2d_stride_two_shape() {
    let tape = Tape::no_grad();
    let x = tape.constant(&Tensor::zeros([3, 8, 8]).unwrap());
    let w = tape.constant(&Tensor::zeros([5, 3, 3, 3]).unwrap());
    let y = tape.conv2d(x, w, None, ConvOptions::new(2, 1)).unwrap();
    assert_eq!(tape.shape(y), vec![5, 4, 4]);
}

#[test]
fn conv2d_kernel_too_large_is_shape_error() {
    let tape = Tape::no_grad();
    let x = tape.constant(&Tensor::zeros([1, 2, 2]).unwrap());
    let w = tape.constant(&Tensor::zeros([1, 1, 5, 5]).unwrap());
    assert!(matches!(tape.conv2d(x, w, None, ConvOptions::new(1, 0)), Err(Error::Shape { .. })));
}

#[test]
fn conv_transpose_doubles_extent() {
    let tape = Tape::no_grad();
    let x = tape.constant(&Tensor::zeros([2, 4, 4]).unwrap());
    let w = tape.constant(&Tensor::zeros([2, 3, 2, 2]).unwrap());
    assert_eq!(tape.shape(tape.conv_transpose2d(x, w, None, 2, 0).unwrap()), vec![3, 8, 8]);
    let w4 = tape.constant(&Tensor::zeros([2, 3, 4, 4]).unwrap());
    assert_eq!(tape.shape(tape.conv_transpose2d(x, w4, None, 2, 1).unwrap()), vec![3, 8, 8]);
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Inner products `<conv(x), r>` and `<x, conv_transpose(r)>` for an exact
/// geometry, where `(h + 2p - k)` is a multiple of the stride.
fn adjoint_pair(c_in: usize, c_out: usize, h: usize, k: usize, s: usize, p: usize, seed: u64) -> (f64, f64) {
    let tape = Tape::no_grad();
    let x = randn(&[c_in, h, h], seed);
    // conv2d reads [C_out, C_in, k, k]; the transpose reads the same buffer as [C_in', C_out', k, k].
    let w = randn(&[c_out, c_in, k, k], seed + 1);
    let y = tape.value(tape.conv2d(tape.constant(&x), tape.constant(&w), None, ConvOptions::new(s, p)).unwrap());
    let r = randn(y.shape(), seed + 2);
    let back = tape.value(tape.conv_transpose2d(tape.constant(&r), tape.constant(&w), None, s, p).unwrap());
    assert_eq!(back.shape(), x.shape());
    (dot(y.data(), r.data()), dot(x.data(), back.data()))
}

#[test]
fn conv_transpose_is_adjoint_of_conv() {
    for (h, k, s, p) in [(4, 2, 2, 0), (4, 4, 2, 1), (5, 3, 2, 1), (4, 3, 1, 1)] {
        let (lhs, rhs) = adjoint_pair(1, 2, h, k, s, p, 9);
        assert!((lhs - rhs).abs() < 1e-9, "k={k}: {lhs} vs {rhs}");
    }
}

#[test]
fn conv_transpose_delta_shifts() {
    let tape = Tape::no_grad();
    let mut x = Tensor::zeros([1, 3, 3]).unwrap();
    x.data_mut()[4] = 1.0; // centre pixel (1, 1)
    let mut w = Tensor::zeros([1, 1, 2, 2]).unwrap();
    w.data_mut()[3] = 1.0; // tap (1, 1)
    let y = tape.value(tape.conv_transpose2d(tape.constant(&x), tape.constant(&w), None, 2, 0).unwrap());
    assert_eq!(y.shape(), &[1, 6, 6]);
    let hot: Vec<usize> = y.data().iter().enumerate().filter(|(_, &v)| v != 0.0).map(|(i, _)| i).collect();
    assert_eq!(hot, vec![3 * 6 + 3]);
}

#[test]
fn conv3d_identity_and_average() {
    let tape = Tape::no_grad();
    let x = randn(&[2, 3, 4, 4], 13);
    let w = tape.constant(&Tensor::ones([2, 1, 1, 1, 1]).unwrap());
    let y = tape.conv3d(tape.constant(&x), w, None, ConvOptions::new(1, 0).groups(2)).unwrap();
    assert!(tape.value(y).bit_eq(&x));

    let c = Tensor::full([1, 5, 5, 5], -1.25).unwrap();
    let w = tape.constant(&Tensor::full([1, 1, 3, 3, 3], 1.0 / 27.0).unwrap());
    let y = tape.value(tape.conv3d(tape.constant(&c), w, None, ConvOptions::new(1, 1)).unwrap());
    assert_eq!(y.shape(), &[1, 5, 5, 5]);
    // interior voxel (2, 2, 2)
    assert!((y.data()[2 * 25 + 2 * 5 + 2] + 1.25).abs() < 1e-12);
}

#[test]
fn conv3d_groups_must_divide() {
    let tape = Tape::no_grad();
    let x = tape.constant(&Tensor::zeros([3, 2, 2, 2]).unwrap());
    let w = tape.constant(&Tensor::zeros([3, 1, 1, 1, 1]).unwrap());
    assert!(tape.conv3d(x, w, None, ConvOptions::new(1, 0).groups(2)).is_err());
}

#[test]
fn conv3d_gradient() {
    let report = check_gradients(
        |t, v| {
            let y = t.conv3d(v[0], v[1], Some(v[2]), ConvOptions::new(1, 1))?;
            random_projection(t, y, 14)
        },
        &[randn(&[2, 3, 4, 4], 15), randn(&[2, 2, 3, 3, 3], 16), randn(&[2], 17)],
        &GradCheck::default(),
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-5, "{report:?}");
}

#[test]
fn depthwise_conv3d_gradient() {
    let report = check_gradients(
        |t, v| {
            let y = t.conv3d(v[0], v[1], None, ConvOptions::new(1, 1).groups(3))?;
            random_projection(t, y, 18)
        },
        &[randn(&[3, 2, 3, 3], 19), randn(&[3, 1, 3, 3, 3], 20)],
        &GradCheck::default(),
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-5, "{report:?}");
}

#[test]
fn conv2d_and_transpose_gradients() {
    let report = check_gradients(
        |t, v| {
            let y = t.conv2d(v[0], v[1], Some(v[2]), ConvOptions::new(2, 1))?;
            let z = t.conv_transpose2d(y, v[3], Some(v[4]), 2, 0)?;
            random_projection(t, z, 21)
        },
        &[
            randn(&[2, 6, 6], 22),
            randn(&[3, 2, 3, 3], 23),
            randn(&[3], 24),
            randn(&[3, 2, 2, 2], 25),
            randn(&[2], 26),
        ],
        &GradCheck::default(),
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

#[test]
fn elementwise_and_shape_op_gradients() {
    let report = check_gradients(
        |t, v| {
            let a = t.mul(v[0], v[1])?;
            let a = t.sub(a, v[1])?;
            let a = t.gelu(a)?;
            let a = t.add_broadcast(a, v[2])?;
            let a = t.mul_broadcast(a, v[2])?;
            let s = t.softmax(a)?;
            let tr = t.transpose(s)?;
            let c = t.concat(&[tr, t.scale(tr, 0.5)?], 0)?;
            let m = t.matmul_nt(c, c)?;
            let r = t.repeat_rows(t.sum_axis(m, 0)?, 2)?;
            random_projection(t, r, 27)
        },
        &[randn(&[3, 4], 28), randn(&[3, 4], 29), randn(&[4], 30)],
        &GradCheck::default(),
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

#[test]
fn loss_gradients() {
    let report = check_gradients(
        |t, v| {
            let a = t.smooth_l1(v[0], v[1], 1.0)?;
            let b = t.mse(v[0], v[1])?;
            t.add(a, b)
        },
        &[randn(&[10], 31), randn(&[10], 32)],
        &GradCheck::default(),
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

#[test]
fn backward_of_sum_is_ones() {
    let tape = Tape::new();
    let x = tape.leaf(&Tensor::new([3], vec![0.3, -2.0, 5.0]).unwrap().with_requires_grad());
    let g = tape.backward(tape.sum(x).unwrap()).unwrap();
    assert_eq!(g.get(x).unwrap(), &[1.0, 1.0, 1.0]);
}

#[test]
fn backward_of_half_square() {
    let tape = Tape::new();
    let x = tape.leaf(&Tensor::new([2], vec![1.0, 2.0]).unwrap().with_requires_grad());
    let sq = tape.mul(x, x).unwrap();
    let loss = tape.scale(tape.sum(sq).unwrap(), 0.5).unwrap();
    let g = tape.backward(loss).unwrap();
    close(g.get(x).unwrap(), &[1.0, 2.0], 1e-15);
}

#[test]
fn backward_on_vector_needs_seed() {
    let tape = Tape::new();
    let x = tape.leaf(&Tensor::ones([2]).unwrap().with_requires_grad());
    let y = tape.scale(x, 3.0).unwrap();
    assert!(matches!(tape.backward(y), Err(Error::Usage(_))));
    let g = tape.backward_with_seed(y, &[1.0, 2.0]).unwrap();
    assert_eq!(g.get(x).unwrap(), &[3.0, 6.0]);
}

#[test]
fn repeated_backward_accumulates_into_leaves() {
    let mut p = restorer::ParamStore::new();
    p.insert("x", Tensor::new([2], vec![1.0, 2.0]).unwrap().with_requires_grad()).unwrap();
    for _ in 0..2 {
        let tape = Tape::new();
        let b = p.bind(&tape);
        let x = b.get("x").unwrap();
        let g = tape.backward(tape.sum(x).unwrap()).unwrap();
        p.accumulate_grads(&b, &g).unwrap();
    }
    assert_eq!(p.get("x").unwrap().grad().unwrap(), &[2.0, 2.0]);
    p.zero_grads();
    assert!(p.get("x").unwrap().grad().map_or(true, |g| g.iter().all(|&v| v == 0.0)));
}

#[test]
fn ops_are_bitwise_deterministic() {
    let run = || {
        let tape = Tape::no_grad();
        let x = tape.constant(&randn(&[2, 6, 6], 33));
        let w = tape.constant(&randn(&[4, 2, 3, 3], 34));
        let y = tape.conv2d(x, w, None, ConvOptions::new(1, 1)).unwrap();
        let y = tape.reshape(y, &[4, 36]).unwrap();
        let y = tape.softmax(y).unwrap();
        tape.value(y)
    };
    assert!(run().bit_eq(&run()));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_rows_sum_to_one_and_shift_invariant(
        v in prop::collection::vec(-50.0f64..50.0, 1..12),
        shift in -100.0f64..100.0,
    ) {
        let tape = Tape::no_grad();
        let n = v.len();
        let a = tape.value(tape.softmax(tape.constant(&Tensor::new([n], v.clone()).unwrap())).unwrap());
        let shifted: Vec<f64> = v.iter().map(|x| x + shift).collect();
        let b = tape.value(tape.softmax(tape.constant(&Tensor::new([n], shifted).unwrap())).unwrap());
        prop_assert!((a.sum() - 1.0).abs() < 1e-9);
        prop_assert!(a.data().iter().all(|&p| p >= 0.0));
        prop_assert!(a.max_abs_diff(&b).unwrap() < 1e-9);
    }

    #[test]
    fn conv_adjoint_holds_for_random_geometry(
        c_in in 1usize..3, c_out in 1usize..3, k in 1usize..5, stride in 1usize..3,
        h in 3usize..8, seed in 0u64..1000,
    ) {
        let pad = k / 2;
        prop_assume!(h + 2 * pad >= k && (h + 2 * pad - k) % stride == 0);
        let (lhs, rhs) = adjoint_pair(c_in, c_out, h, k, stride, pad, seed);
        prop_assert!((lhs - rhs).abs() < 1e-9, "{} vs {}", lhs, rhs);
    }

    #[test]
    fn matmul_gradient_random(m in 1usize..5, k in 1usize..5, n in 1usize..5, seed in 0u64..500) {
        let report = check_gradients(
            |t, v| { let p = t.matmul(v[0], v[1])?; random_projection(t, p, seed) },
            &[randn(&[m, k], seed), randn(&[k, n], seed + 7)],
            &GradCheck::default(),
        ).unwrap();
        prop_assert!(report.max_rel_error < 1e-4);
    }
}
