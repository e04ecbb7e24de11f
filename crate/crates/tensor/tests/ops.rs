use fitb_tensor::{
    check_op, decode_checkpoint, encode_checkpoint, grad_check, op_suite, GradCheckOptions, Graph, OpKind, ParameterStore, Tensor, TensorError,
    OPS,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn m(rows: usize, cols: usize, data: &[f64]) -> Tensor<f64> {
    Tensor::matrix(rows, cols, data.to_vec()).unwrap()
}

#[test]
fn matmul_examples() {
    let mut g = Graph::<f64>::new();
    let i2 = g.constant(m(2, 2, &[1.0, 0.0, 0.0, 1.0]));
    let a = g.constant(m(2, 2, &[3.0, 4.0, 5.0, 6.0]));
    let out = g.matmul(i2, a).unwrap();
    assert_eq!(g.value(out).data(), &[3.0, 4.0, 5.0, 6.0]);

    let b = g.constant(m(2, 2, &[1.0, 2.0, 3.0, 4.0]));
    let swap = g.constant(m(2, 2, &[0.0, 1.0, 1.0, 0.0]));
    let out = g.matmul(b, swap).unwrap();
    assert_eq!(g.value(out).data(), &[2.0, 1.0, 4.0, 3.0]);

    let z = g.constant(Tensor::zeros(2, 2));
    let out = g.matmul(z, a).unwrap();
    assert!(g.value(out).data().iter().all(|&x| x == 0.0));
}

#[test]
fn matmul_shape_error_reports_both_shapes() {
    let mut g = Graph::<f64>::new();
    let a = g.constant(Tensor::zeros(2, 3));
    let b = g.constant(Tensor::zeros(2, 3));
    match g.matmul(a, b) {
        Err(TensorError::Dimension { lhs, rhs, .. }) => {
            assert_eq!(lhs, vec![2, 3]);
            assert_eq!(rhs, vec![2, 3]);
        }
        other => panic!("expected dimension error, got {:?}", other.map(|_| ())),
    }
}

#[test]
fn softmax_examples() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(m(2, 2, &[0.0, 0.0, 2f64.ln(), 0.0]));
    let y = g.softmax_rows(x).unwrap();
    let v = g.value(y).data();
    assert!((v[0] - 0.5).abs() < 1e-15 && (v[1] - 0.5).abs() < 1e-15);
    assert!((v[2] - 2.0 / 3.0).abs() < 1e-15 && (v[3] - 1.0 / 3.0).abs() < 1e-15);
}

#[test]
fn cross_entropy_examples() {
    let mut g = Graph::<f64>::new();
    let uniform = g.constant(Tensor::zeros(1, 4));
    let l = g.cross_entropy(uniform, &[2], None).unwrap();
    assert!((g.value(l).item() - 4f64.ln()).abs() < 1e-12);

    let sat = g.constant(m(1, 3, &[20.0, 0.0, 0.0]));
    let l = g.cross_entropy(sat, &[0], None).unwrap();
    assert!(g.value(l).item() < 1e-8);

    let two = g.constant(m(1, 2, &[1.0, 0.0]));
    let l = g.cross_entropy(two, &[0], None).unwrap();
    let expected = -(1f64.exp() / (1f64.exp() + 1.0)).ln();
    assert!((g.value(l).item() - expected).abs() < 1e-12);
    assert!((expected - 0.3133).abs() < 1e-4);

    let bad = g.cross_entropy(two, &[2], None);
    assert!(matches!(bad, Err(TensorError::Index { .. })));

    // masked rows do not count
    let rows = g.constant(m(2, 2, &[1.0, 0.0, -50.0, 50.0]));
    let l = g.cross_entropy(rows, &[0, 0], Some(&[true, false])).unwrap();
    assert!((g.value(l).item() - expected).abs() < 1e-12);
}

#[test]
fn structural_examples() {
    let mut g = Graph::<f64>::new();
    let z = g.constant(Tensor::scalar(0.0));
    let t = g.tanh(z).unwrap();
    assert_eq!(g.value(t).item(), 0.0);

    let a = g.constant(Tensor::row(&[1.0, 2.0]));
    let b = g.constant(Tensor::row(&[3.0]));
    let c = g.apply(&OpKind::ConcatLastAxis, &[a, b]).unwrap();
    assert_eq!(g.value(c).data(), &[1.0, 2.0, 3.0]);

    let x = g.constant(Tensor::row(&[2.0, 2.0, 2.0, 2.0]));
    let gamma = g.constant(Tensor::row(&[1.0; 4]));
    let beta = g.constant(Tensor::row(&[0.0; 4]));
    let ln = g.layer_norm(x, gamma, beta, 1e-5).unwrap();
    assert!(g.value(ln).data().iter().all(|&v| v.abs() < 1e-12));
}

#[test]
fn unsupported_kind_is_rejected() {
    assert!(matches!(OpKind::<f64>::parse("conv2d"), Err(TensorError::UnsupportedOp(_))));
    let mut g = Graph::<f64>::new();
    let a = g.constant(Tensor::scalar(1.0));
    assert!(g.apply(&OpKind::Add, &[a]).is_err());
    assert!(g.apply(&OpKind::Slice { axis: 2, start: 0, end: 1 }, &[a]).is_err());
}

#[test]
fn checked_mode_flags_non_finite() {
    let mut g = Graph::<f64>::new().with_checks(true);
    let a = g.constant(Tensor::scalar(f64::MAX));
    let r = g.scale(a, 10.0);
    assert!(matches!(r, Err(TensorError::Numeric { .. })));
}

#[test]
fn grad_check_trivial_functions() {
    let mut s = ParameterStore::<f64>::new(0);
    s.insert("x", Tensor::scalar(3.0)).unwrap();
    let rep = grad_check(
        |g, s| {
            let x = g.param(s, "x")?;
            let y = g.mul(x, x)?;
            g.sum(y)
        },
        &mut s,
        &GradCheckOptions::default(),
    )
    .unwrap();
    assert!(rep.max_rel_error < 1e-8);
    let (_, _, a, n) = rep.worst.unwrap();
    assert!((a - 6.0).abs() < 1e-12 && (n - 6.0).abs() < 1e-6);

    let rep = grad_check(|g, _| Ok(g.constant(Tensor::scalar(2.0))), &mut s, &GradCheckOptions::default()).unwrap();
    assert_eq!(rep.max_rel_error, 0.0);
    assert_eq!(s.get("x").unwrap().grad.as_ref().unwrap().item(), 0.0);
}

#[test]
fn every_op_passes_grad_check() {
    for (op, err) in op_suite(3, 4, 100).unwrap() {
        assert!(err < 1e-4, "{op}: relative error {err}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn grad_check_random_shapes(op_idx in 0usize..OPS.len(), rows in 1usize..5, cols in 2usize..6, seed in 0u64..10_000) {
        let err = check_op(OPS[op_idx], rows, cols, seed).unwrap();
        prop_assert!(err < 1e-4, "{}: {}", OPS[op_idx], err);
    }

    #[test]
    fn softmax_rows_sum_to_one_and_shift_invariant(vals in proptest::collection::vec(-30.0f32..30.0, 1..12), shift in -50.0f32..50.0) {
        let n = vals.len();
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::matrix(1, n, vals.clone()).unwrap());
        let y = g.softmax_rows(x).unwrap();
        let shifted = g.constant(Tensor::matrix(1, n, vals.iter().map(|v| v + shift).collect()).unwrap());
        let y2 = g.softmax_rows(shifted).unwrap();
        let sum: f32 = g.value(y).data().iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-6);
        prop_assert!(g.value(y).data().iter().all(|&p| p >= 0.0));
        for (a, b) in g.value(y).data().iter().zip(g.value(y2).data()) {
            prop_assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact(vals in proptest::collection::vec(proptest::num::f32::ANY, 1..40), seed in any::<u64>()) {
        let mut s = ParameterStore::<f32>::new(seed);
        s.insert("v", Tensor::matrix(1, vals.len(), vals.clone()).unwrap()).unwrap();
        s.insert("w", Tensor::scalar(1.5)).unwrap();
        let (manifest, blob) = encode_checkpoint(&s, serde_json::json!({"k": 1}));
        let back = decode_checkpoint(&manifest, &blob).unwrap();
        prop_assert_eq!(back.rng_seed, seed);
        let (m2, blob2) = encode_checkpoint(&back, serde_json::json!({"k": 1}));
        prop_assert_eq!(blob, blob2);
        prop_assert_eq!(manifest, m2);
    }
}

#[test]
fn checkpoint_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    let mut s = ParameterStore::<f32>::new(7);
    s.insert("w", Tensor::matrix(2, 2, vec![1.0, -2.0, 3.5, 0.25]).unwrap()).unwrap();
    fitb_tensor::save_checkpoint(&path, &s, serde_json::json!({"note": "x"})).unwrap();
    let (back, extra) = fitb_tensor::load_checkpoint(&path).unwrap();
    assert_eq!(back.value("w").unwrap(), s.value("w").unwrap());
    assert_eq!(extra["note"], "x");

    let (mut manifest, blob) = encode_checkpoint(&s, serde_json::Value::Null);
    assert!(decode_checkpoint(&manifest, &blob[..blob.len() - 1]).is_err());
    manifest.version = 99;
    assert!(decode_checkpoint(&manifest, &blob).is_err());
}

#[test]
fn forward_is_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut g = Graph::<f32>::new();
        let mut rand = |n: usize| Tensor::matrix(4, 4, (0..n).map(|_| rng.random_range(-1.5f32..1.5)).collect()).unwrap();
        let q = g.constant(rand(16));
        let k = g.constant(rand(16));
        let o = g.attention(q, k, k, 2, None).unwrap();
        g.value(o).clone()
    };
    assert_eq!(run(), run());
}
