use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sigma_core::mamba::{MambaBlock, MambaDims, SeqBlock};
use sigma_core::{Init, ParamStore, Tape, Tensor};

struct ScanInputs {
    dims: (usize, usize, usize, usize),
    u: Vec<f64>,
    delta: Vec<f64>,
    a: Vec<f64>,
    bm: Vec<f64>,
    cm: Vec<f64>,
    d: Vec<f64>,
}

fn random_inputs(b: usize, l: usize, e: usize, s: usize, seed: u64) -> ScanInputs {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = |n: usize, lo: f64, hi: f64| -> Vec<f64> { (0..n).map(|_| rng.gen_range(lo..hi)).collect() };
    ScanInputs {
        dims: (b, l, e, s),
        u: v(b * l * e, -1.0, 1.0),
        delta: v(b * l * e, 0.01, 1.0),
        a: v(e * s, -3.0, -0.1),
        bm: v(b * l * s, -1.0, 1.0),
        cm: v(b * l * s, -1.0, 1.0),
        d: v(e, -1.0, 1.0),
    }
}

fn tape_scan(x: &ScanInputs) -> Vec<f64> {
    let (b, l, e, s) = x.dims;
    let mut tape = Tape::inference();
    let mut c = |shape: Vec<usize>, data: &[f64]| tape.constant(Tensor::new(shape, data.to_vec()).unwrap());
    let u = c(vec![b, l, e], &x.u);
    let delta = c(vec![b, l, e], &x.delta);
    let a = c(vec![e, s], &x.a);
    let bm = c(vec![b, l, s], &x.bm);
    let cm = c(vec![b, l, s], &x.cm);
    let d = c(vec![e], &x.d);
    let y = tape.selective_scan(u, delta, a, bm, cm, d).unwrap();
    tape.value(y).to_vec()
}

/// Closed form of the recurrence: every output is a sum over all earlier
/// inputs, each decayed by the product of the intervening transitions.
fn dense_scan(x: &ScanInputs) -> Vec<f64> {
    let (b, l, e, s) = x.dims;
    let mut y = vec![0.0; b * l * e];
    for bi in 0..b {
        for t in 0..l {
            for ei in 0..e {
                let row = |k: usize| bi * l + k;
                let mut acc = x.d[ei] * x.u[row(t) * e + ei];
                for si in 0..s {
                    let a = x.a[ei * s + si];
                    for tau in 0..=t {
                        let decay: f64 = (tau + 1..=t).map(|k| (x.delta[row(k) * e + ei] * a).exp()).product();
                        let drive = x.delta[row(tau) * e + ei] * x.bm[row(tau) * s + si] * x.u[row(tau) * e + ei];
                        acc += x.cm[row(t) * s + si] * decay * drive;
                    }
                }
                y[row(t) * e + ei] = acc;
            }
        }
    }
    y
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn scan_matches_dense_unrolled_sum() {
    for (l, seed) in [(1, 1), (8, 2), (12, 3)] {
        let x = random_inputs(2, l, 3, 4, seed);
        let err = max_abs_diff(&tape_scan(&x), &dense_scan(&x));
        assert!(err < 1e-10, "L={l}: {err}");
    }
}

#[test]
fn scalar_recurrence_by_hand() {
    // exp(Δ·A) = 0.5 and Δ·B = 1 with Δ = 1.
    let x = ScanInputs {
        dims: (1, 2, 1, 1),
        u: vec![1.0, 1.0],
        delta: vec![1.0, 1.0],
        a: vec![0.5f64.ln()],
        bm: vec![1.0, 1.0],
        cm: vec![1.0, 1.0],
        d: vec![0.0],
    };
    let y = tape_scan(&x);
    assert!(max_abs_diff(&y, &[1.0, 1.5]) < 1e-15, "{y:?}");
}

#[test]
fn vanishing_step_leaves_only_the_skip() {
    let mut x = random_inputs(1, 6, 2, 3, 4);
    x.delta.iter_mut().for_each(|v| *v = 1e-14);
    let y = tape_scan(&x);
    let skip: Vec<f64> = x.u.iter().enumerate().map(|(i, u)| x.d[i % 2] * u).collect();
    assert!(max_abs_diff(&y, &skip) < 1e-12);
}

#[test]
fn transitions_are_contractions() {
    let mut store = ParamStore::<f64>::new();
    let dims = MambaDims {
        dim: 16,
        inner: 32,
        state: 8,
        conv: 4,
        dt_rank: 1,
    };
    let block = MambaBlock::new(&mut store, "m", dims, &mut Init::new(0));
    assert!(store.get(block.a_log).data().iter().all(|&v| -v.exp() < 0.0));
}

#[test]
fn block_matches_recurrent_steps_over_twelve_steps() {
    let dims = MambaDims {
        dim: 8,
        inner: 16,
        state: 4,
        conv: 4,
        dt_rank: 1,
    };
    let mut store = ParamStore::<f64>::new();
    let mut init = Init::new(11);
    let block = MambaBlock::new(&mut store, "m", dims, &mut init);
    for id in [block.in_proj, block.x_proj, block.out_proj] {
        let shape = store.get(id).shape().to_vec();
        *store.get_mut(id) = init.normal(shape, 0.5);
    }
    let (b, l) = (2, 12);
    let x = init.normal::<f64>(vec![b, l, dims.dim], 1.0);
    let mut tape = Tape::inference();
    let p = store.bind(&mut tape);
    let xv = tape.constant(x.clone());
    let y = block.forward(&mut tape, &p, xv).unwrap();
    let y = tape.value(y);
    for row in 0..b {
        let mut st = block.initial_state();
        for t in 0..l {
            let off = (row * l + t) * dims.dim;
            let out = block.step(&store, &mut st, &x.data()[off..off + dims.dim]).unwrap();
            assert!(max_abs_diff(&out, &y[off..off + dims.dim]) < 1e-10);
        }
    }
}
