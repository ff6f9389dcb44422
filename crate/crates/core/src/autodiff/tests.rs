use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Contract `y` against a fixed pseudo-random weight so no gradient cancels by symmetry.
fn weighted_sum(tape: &mut Tape<'_, f64>, y: Var) -> Result<Var> {
    let shape = tape.shape(y).to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let w = tape.constant(random(&shape, &mut rng));
    let p = tape.mul(y, w)?;
    tape.sum(p)
}

fn fd_check<F>(inputs: &[Tensor<f64>], f: F) -> f64
where
    F: for<'p> Fn(&mut Tape<'p, f64>, &[Var]) -> Result<Var> + Sync,
{
    crate::gradcheck::check_inputs(inputs, f).unwrap().max_rel_err()
}

#[test]
fn matmul_identity_and_dot() {
    let mut tape = Tape::new();
    let i = tape.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
    let m = tape.constant(t(&[2, 2], &[5.0, 6.0, 7.0, 8.0]));
    let y = tape.matmul(i, m).unwrap();
    assert_eq!(tape.value(y), &[5.0, 6.0, 7.0, 8.0]);

    let a = tape.constant(t(&[1, 2], &[1.0, 2.0]));
    let b = tape.constant(t(&[2, 1], &[3.0, 4.0]));
    let y = tape.matmul(a, b).unwrap();
    assert_eq!(tape.value(y), &[11.0]);
}

#[test]
fn matmul_rejects_mismatched_inner_dims() {
    let mut tape = Tape::<f64>::new();
    let a = tape.zeros(vec![2, 3]);
    let b = tape.zeros(vec![2, 3]);
    assert!(matches!(tape.matmul(a, b), Err(Error::Dimension { .. })));
}

#[test]
fn matmul_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = random(&[3, 4], &mut rng);
    let b = random(&[4, 2], &mut rng);
    // Plain sum, as in the operation's own example.
    let err = fd_check(&[a.clone(), b.clone()], |tp, v| {
        let y = tp.matmul(v[0], v[1])?;
        tp.sum(y)
    });
    assert!(err < 1e-6, "{err}");
    // Batched left operand, shared right operand, and batched right operand.
    let a3 = random(&[2, 3, 4], &mut rng);
    let b3 = random(&[2, 4, 2], &mut rng);
    let err = fd_check(&[a3.clone(), b], |tp, v| {
        let y = tp.matmul(v[0], v[1])?;
        weighted_sum(tp, y)
    });
    assert!(err < 1e-6, "{err}");
    let err = fd_check(&[a3, b3], |tp, v| {
        let y = tp.matmul(v[0], v[1])?;
        weighted_sum(tp, y)
    });
    assert!(err < 1e-6, "{err}");
}

#[test]
fn pointwise_values() {
    let mut tape = Tape::new();
    let z = tape.constant(t(&[1], &[0.0]));
    let s = tape.sigmoid(z).unwrap();
    let si = tape.silu(z).unwrap();
    assert_eq!(tape.value(s), &[0.5]);
    assert_eq!(tape.value(si), &[0.0]);
    let one = tape.constant(t(&[1], &[1.0]));
    let g = tape.gelu(one).unwrap();
    // 0.5·(1 + tanh(√(2/π)·1.044715))
    let expected = 0.5 * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * 1.044_715f64).tanh());
    assert!((tape.value(g)[0] - expected).abs() < 1e-15);
    assert!((tape.value(g)[0] - 0.8412).abs() < 1e-4);
}

#[test]
fn gelu_tanh_form_is_close_to_erf_form() {
    // erf-based GELU at a few points, from a high-precision table.
    let exact = [(-2.0, -0.045_500_263_9), (-0.5, -0.154_268_546_2), (1.0, 0.841_344_746_1), (2.5, 2.484_475_8)];
    for (x, y) in exact {
        let approx: f64 = kernels::gelu(x);
        assert!((approx - y).abs() < 1e-3, "gelu({x}) = {approx}, exact {y}");
    }
}

#[test]
fn unary_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random(&[3, 5], &mut rng);
    for kind in [
        Unary::Sigmoid,
        Unary::Tanh,
        Unary::Silu,
        Unary::Gelu,
        Unary::Relu,
        Unary::Exp,
        Unary::Softplus,
        Unary::Neg,
    ] {
        let err = fd_check(std::slice::from_ref(&x), |tp, v| {
            let y = tp.unary(kind, v[0])?;
            weighted_sum(tp, y)
        });
        assert!(err < 1e-6, "{kind:?}: {err}");
    }
}

#[test]
fn binary_broadcast_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = random(&[2, 3, 4], &mut rng);
    let bias = random(&[4], &mut rng);
    let s = random(&[1], &mut rng);
    for kind in [Binary::Add, Binary::Sub, Binary::Mul] {
        let err = fd_check(&[a.clone(), bias.clone(), s.clone()], |tp, v| {
            let y = tp.binary(kind, v[0], v[1])?;
            let y = tp.binary(kind, v[2], y)?;
            weighted_sum(tp, y)
        });
        assert!(err < 1e-6, "{kind:?}: {err}");
    }
    let mut tape = Tape::<f64>::new();
    let x = tape.zeros(vec![2, 3]);
    let y = tape.zeros(vec![2]);
    assert!(tape.add(x, y).is_err());
}

#[test]
fn fan_out_accumulates() {
    let mut tape = Tape::new();
    let x = tape.leaf(t(&[3], &[1.0, -2.0, 0.5]), true);
    let y = tape.add(x, x).unwrap();
    let l = tape.sum(y).unwrap();
    tape.backward(l).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[2.0, 2.0, 2.0]);
}

#[test]
fn backward_basics() {
    let mut tape = Tape::new();
    let x = tape.leaf(t(&[3], &[1.0, -2.0, 0.5]), true);
    let l = tape.sum(x).unwrap();
    tape.backward(l).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[1.0, 1.0, 1.0]);

    let mut tape = Tape::new();
    let x = tape.leaf(t(&[3], &[1.0, -2.0, 0.5]), true);
    let sq = tape.mul(x, x).unwrap();
    let l = tape.sum(sq).unwrap();
    tape.backward(l).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[2.0, -4.0, 1.0]);
    // A second call accumulates.
    tape.backward(l).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[4.0, -8.0, 2.0]);
    tape.zero_grad();
    assert!(tape.grad(x).is_none());
}

#[test]
fn backward_rejects_non_scalar() {
    let mut tape = Tape::new();
    let x = tape.leaf(t(&[2], &[1.0, 2.0]), true);
    assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
}

#[test]
fn conv1d_examples() {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[1, 3, 1], &[1.0, 2.0, 3.0]));
    let k = tape.constant(t(&[2, 1], &[1.0, 1.0]));
    let b = tape.constant(t(&[1], &[0.0]));
    let y = tape.conv1d_depthwise(x, k, b, true).unwrap();
    assert_eq!(tape.value(y), &[1.0, 3.0, 5.0]);

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let xr = random(&[2, 5, 3], &mut rng);
    let x = tape.constant(xr.clone());
    let k = tape.constant(t(&[1, 3], &[1.0, 1.0, 1.0]));
    let b = tape.constant(t(&[3], &[0.0; 3]));
    let y = tape.conv1d_depthwise(x, k, b, true).unwrap();
    assert_eq!(tape.value(y), xr.data());

    // Kernel wider than the sequence is fine.
    let x = tape.constant(t(&[1, 2, 1], &[1.0, 2.0]));
    let k = tape.constant(t(&[4, 1], &[1.0, 1.0, 1.0, 1.0]));
    let b = tape.constant(t(&[1], &[0.5]));
    let y = tape.conv1d_depthwise(x, k, b, true).unwrap();
    assert_eq!(tape.value(y), &[1.5, 3.5]);
}

#[test]
fn conv1d_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random(&[2, 6, 3], &mut rng);
    let k = random(&[4, 3], &mut rng);
    let b = random(&[3], &mut rng);
    for causal in [true, false] {
        let err = fd_check(&[x.clone(), k.clone(), b.clone()], |tp, v| {
            let y = tp.conv1d_depthwise(v[0], v[1], v[2], causal)?;
            weighted_sum(tp, y)
        });
        assert!(err < 1e-6, "causal={causal}: {err}");
    }
}

#[test]
fn layernorm_examples() {
    let mut tape = Tape::new();
    let g = tape.constant(t(&[2], &[1.0, 1.0]));
    let b = tape.constant(t(&[2], &[0.0, 0.0]));
    let x = tape.constant(t(&[1, 2], &[1.0, 3.0]));
    let y = tape.layernorm(x, g, b, 0.0).unwrap();
    assert_eq!(tape.value(y), &[-1.0, 1.0]);

    let c = tape.constant(t(&[1, 2], &[4.0, 4.0]));
    let y = tape.layernorm(c, g, b, 1e-5).unwrap();
    assert_eq!(tape.value(y), &[0.0, 0.0]);

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = tape.constant(random(&[4, 7], &mut rng));
    let g = tape.constant(random(&[7], &mut rng));
    let bias = random(&[7], &mut rng);
    let bv = tape.constant(bias.clone());
    let y = tape.layernorm(x, g, bv, 1e-5).unwrap();
    // Σ_j g_j·x̂_j is not zero in general, so check the mean with unit gain.
    let one = tape.constant(Tensor::full(vec![7], 1.0));
    let zero = tape.constant(Tensor::zeros(vec![7]));
    let yn = tape.layernorm(x, one, zero, 1e-5).unwrap();
    for row in tape.value(yn).chunks(7) {
        assert!(row.iter().sum::<f64>().abs() / 7.0 < 1e-6);
    }
    assert_eq!(tape.shape(y), &[4, 7]);
}

#[test]
fn layernorm_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = random(&[3, 6], &mut rng);
    let g = random(&[6], &mut rng);
    let b = random(&[6], &mut rng);
    let err = fd_check(&[x, g, b], |tp, v| {
        let y = tp.layernorm(v[0], v[1], v[2], 1e-5)?;
        weighted_sum(tp, y)
    });
    assert!(err < 1e-6, "{err}");
}

#[test]
fn cross_entropy_examples() {
    let mut tape = Tape::<f64>::new();
    let l = tape.constant(Tensor::zeros(vec![1, 10]));
    let loss = tape.softmax_cross_entropy(l, &[3]).unwrap();
    assert!((tape.value(loss)[0] - 10f64.ln()).abs() < 1e-12);

    let l = tape.constant(t(&[1, 2], &[10.0, -10.0]));
    let loss = tape.softmax_cross_entropy(l, &[0]).unwrap();
    // −log(1/(1+e^−20)) = log1p(e^−20)
    let expected = (-20f64).exp().ln_1p();
    assert!((tape.value(loss)[0] - expected).abs() < 1e-20);
    assert!((tape.value(loss)[0] - 2.06e-9).abs() < 1e-11);

    assert!(matches!(
        tape.softmax_cross_entropy(l, &[2]),
        Err(Error::Index { .. })
    ));
}

#[test]
fn cross_entropy_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let logits = random(&[3, 5], &mut rng);
    let err = fd_check(&[logits], |tp, v| tp.softmax_cross_entropy(v[0], &[0, 4, 2]));
    assert!(err < 1e-6, "{err}");
}

#[test]
fn embedding_gather_and_counts() {
    let mut tape = Tape::new();
    let table = tape.leaf(t(&[4, 2], &[0.0, 0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0]), true);
    let y = tape.embedding(table, &[0, 2, 2, 3, 0, 2], &[2, 3], Some(0)).unwrap();
    assert_eq!(tape.shape(y), &[2, 3, 2]);
    assert_eq!(&tape.value(y)[..6], &[0.0, 0.0, 3.0, 4.0, 3.0, 4.0]);
    let l = tape.sum(y).unwrap();
    tape.backward(l).unwrap();
    // Occurrence counts per row; padding row excluded.
    assert_eq!(tape.grad(table).unwrap(), &[0.0, 0.0, 0.0, 0.0, 3.0, 3.0, 1.0, 1.0]);
    assert!(tape.embedding(table, &[4], &[1, 1], Some(0)).is_err());
}

#[test]
fn shape_ops_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = random(&[2, 4, 3], &mut rng);
    let err = fd_check(std::slice::from_ref(&x), |tp, v| {
        let a = tp.narrow(v[0], 2, 1, 2)?;
        let b = tp.select(v[0], 1, 3)?;
        let c = tp.permute_time(v[0], vec![3, 2, 1, 0, 0, 1, 2, 3])?;
        let r = tp.reshape(c, vec![8, 3])?;
        let tr = tp.transpose(r)?;
        let steps: Vec<Var> = (0..4).map(|t| tp.select(v[0], 1, t)).collect::<Result<_>>()?;
        let st = tp.stack_time(&steps)?;
        let s1 = weighted_sum(tp, a)?;
        let s2 = weighted_sum(tp, b)?;
        let s3 = weighted_sum(tp, tr)?;
        let s4 = weighted_sum(tp, st)?;
        let m = tp.mean(v[0])?;
        let s = tp.add(s1, s2)?;
        let s = tp.add(s, s3)?;
        let s = tp.add(s, s4)?;
        let s = tp.add(s, m)?;
        tp.affine(s, 0.5, 1.0)
    });
    assert!(err < 1e-6, "{err}");
}

#[test]
fn scan_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (b, l, e, s) = (2, 5, 3, 4);
    let u = random(&[b, l, e], &mut rng);
    let mut delta = random(&[b, l, e], &mut rng);
    delta.data_mut().iter_mut().for_each(|v| *v = 0.05 + 0.5 * v.abs());
    let mut a = random(&[e, s], &mut rng);
    a.data_mut().iter_mut().for_each(|v| *v = -0.2 - v.abs());
    let bm = random(&[b, l, s], &mut rng);
    let cm = random(&[b, l, s], &mut rng);
    let d = random(&[e], &mut rng);
    let err = fd_check(&[u, delta, a, bm, cm, d], |tp, v| {
        let y = tp.selective_scan(v[0], v[1], v[2], v[3], v[4], v[5])?;
        weighted_sum(tp, y)
    });
    assert!(err < 1e-6, "{err}");
}

#[test]
fn non_finite_results_are_errors() {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[1], &[1000.0]));
    assert!(matches!(tape.exp(x), Err(Error::NonFinite { op: "exp", .. })));
}

#[test]
fn inference_tape_tracks_nothing() {
    let mut tape = Tape::inference();
    let x = tape.leaf(t(&[2], &[1.0, 2.0]), true);
    let y = tape.sum(x).unwrap();
    assert!(!tape.requires_grad(y));
    assert!(tape.backward(y).is_err());
}
