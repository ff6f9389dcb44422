//! Central finite-difference checks against tape gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::autodiff::{Binary, Tape, Unary, Var};
use crate::blocks::Mode;
use crate::config::ModelConfig;
use crate::data::Batch;
use crate::error::Result;
use crate::model::SigmaModel;
use crate::params::{Bound, Gradients, ParamId, ParamStore};
use crate::tensor::Tensor;

pub const FD_STEP: f64 = 1e-5;

/// Gradients with a largest magnitude below this are not compared.
pub const GRAD_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    /// `‖analytic − numeric‖∞ / max(‖analytic‖∞, ‖numeric‖∞)`
    pub rel_err: f64,
    pub scale: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradReport {
    pub tensors: Vec<TensorCheck>,
}

impl GradReport {
    /// Worst relative error over tensors whose gradient exceeds [`GRAD_FLOOR`].
    pub fn max_rel_err(&self) -> f64 {
        self.tensors
            .iter()
            .filter(|t| t.scale > GRAD_FLOOR)
            .map(|t| t.rel_err)
            .fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&TensorCheck> {
        self.tensors
            .iter()
            .filter(|t| t.scale > GRAD_FLOOR)
            .max_by(|a, b| a.rel_err.total_cmp(&b.rel_err))
    }
}

/// Check every coordinate of every parameter in `store`. `f` builds a scalar
/// loss; it must be deterministic given the parameters.
pub fn check_params<F>(store: &ParamStore<f64>, f: F) -> Result<GradReport>
where
    F: for<'p> Fn(&mut Tape<'p, f64>, &Bound) -> Result<Var> + Sync,
{
    let analytic = {
        let mut tape = Tape::new();
        let p = store.bind(&mut tape);
        let loss = f(&mut tape, &p)?;
        tape.backward(loss)?;
        Gradients::collect(&tape, &p, store)
    };
    let eval = |s: &ParamStore<f64>| -> Result<f64> {
        let mut tape = Tape::inference();
        let p = s.bind(&mut tape);
        let loss = f(&mut tape, &p)?;
        Ok(tape.value(loss)[0])
    };
    let ids: Vec<ParamId> = store.ids().collect();
    let tensors = ids
        .par_iter()
        .map(|&id| {
            let mut s = store.clone();
            let a = analytic.get(id);
            let (mut diff, mut scale) = (0.0f64, 0.0f64);
            for (j, &a_j) in a.iter().enumerate() {
                let orig = s.get(id).data()[j];
                s.get_mut(id).data_mut()[j] = orig + FD_STEP;
                let plus = eval(&s)?;
                s.get_mut(id).data_mut()[j] = orig - FD_STEP;
                let minus = eval(&s)?;
                s.get_mut(id).data_mut()[j] = orig;
                let numeric = (plus - minus) / (2.0 * FD_STEP);
                diff = diff.max((numeric - a_j).abs());
                scale = scale.max(numeric.abs()).max(a_j.abs());
            }
            Ok(TensorCheck {
                name: store.name(id).to_string(),
                rel_err: if scale > 0.0 { diff / scale } else { 0.0 },
                scale,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GradReport { tensors })
}

/// Like [`check_params`] for free-standing input tensors.
pub fn check_inputs<F>(inputs: &[Tensor<f64>], f: F) -> Result<GradReport>
where
    F: for<'p> Fn(&mut Tape<'p, f64>, &[Var]) -> Result<Var> + Sync,
{
    let mut store = ParamStore::new();
    let ids: Vec<ParamId> = inputs
        .iter()
        .enumerate()
        .map(|(i, x)| store.add(format!("input{i}"), x.clone()))
        .collect();
    check_params(&store, |tape, p| {
        let vars: Vec<Var> = ids.iter().map(|&id| p[id]).collect();
        f(tape, &vars)
    })
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .expect("shape matches buffer")
}

/// Contract `y` with a fixed random weight so no gradient cancels by symmetry.
fn weighted_sum(tape: &mut Tape<'_, f64>, y: Var) -> Result<Var> {
    let shape = tape.shape(y).to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let w = tape.constant(random(&shape, &mut rng));
    let p = tape.mul(y, w)?;
    tape.sum(p)
}

type InputFn = dyn for<'p> Fn(&mut Tape<'p, f64>, &[Var]) -> Result<Var> + Sync;

/// One finite-difference check per tape operation.
pub fn primitive_suite() -> Result<Vec<(&'static str, GradReport)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut out = Vec::new();
    let mut run = |name: &'static str,
                   inputs: Vec<Tensor<f64>>,
                   f: &InputFn|
     -> Result<()> {
        out.push((name, check_inputs(&inputs, f)?));
        Ok(())
    };
    let mut gen = |shapes: &[&[usize]]| -> Vec<Tensor<f64>> {
        shapes.iter().map(|s| random(s, &mut rng)).collect()
    };

    run("matmul", gen(&[&[3, 4], &[4, 2]]), &|tp, v| {
        let y = tp.matmul(v[0], v[1])?;
        weighted_sum(tp, y)
    })?;
    run("matmul batched", gen(&[&[2, 3, 4], &[4, 2]]), &|tp, v| {
        let y = tp.matmul(v[0], v[1])?;
        weighted_sum(tp, y)
    })?;
    run("transpose", gen(&[&[3, 4]]), &|tp, v| {
        let y = tp.transpose(v[0])?;
        weighted_sum(tp, y)
    })?;
    for (name, kind) in [("add", Binary::Add), ("sub", Binary::Sub), ("mul", Binary::Mul)] {
        run(name, gen(&[&[2, 3, 4], &[4]]), &move |tp, v| {
            let y = tp.binary(kind, v[0], v[1])?;
            weighted_sum(tp, y)
        })?;
    }
    let unaries = [
        ("sigmoid", Unary::Sigmoid),
        ("tanh", Unary::Tanh),
        ("silu", Unary::Silu),
        ("gelu", Unary::Gelu),
        ("relu", Unary::Relu),
        ("exp", Unary::Exp),
        ("softplus", Unary::Softplus),
        ("neg", Unary::Neg),
    ];
    for (name, kind) in unaries {
        run(name, gen(&[&[3, 5]]), &move |tp, v| {
            let y = tp.unary(kind, v[0])?;
            weighted_sum(tp, y)
        })?;
    }
    run("affine", gen(&[&[6]]), &|tp, v| {
        let y = tp.affine(v[0], -1.5, 0.25)?;
        weighted_sum(tp, y)
    })?;
    run("sum and mean", gen(&[&[2, 3]]), &|tp, v| {
        let s = tp.sum(v[0])?;
        let m = tp.mean(v[0])?;
        let m = tp.affine(m, 3.0, 0.0)?;
        tp.add(s, m)
    })?;
    run("reshape", gen(&[&[2, 6]]), &|tp, v| {
        let y = tp.reshape(v[0], vec![3, 4])?;
        weighted_sum(tp, y)
    })?;
    run("narrow", gen(&[&[2, 4, 3]]), &|tp, v| {
        let y = tp.narrow(v[0], 2, 1, 2)?;
        weighted_sum(tp, y)
    })?;
    run("select and stack", gen(&[&[2, 4, 3]]), &|tp, v| {
        let steps: Vec<Var> = [3, 0, 0, 2].iter().map(|&t| tp.select(v[0], 1, t)).collect::<Result<_>>()?;
        let y = tp.stack_time(&steps)?;
        weighted_sum(tp, y)
    })?;
    run("permute_time", gen(&[&[2, 4, 3]]), &|tp, v| {
        let y = tp.permute_time(v[0], vec![3, 2, 1, 0, 0, 1, 2, 3])?;
        weighted_sum(tp, y)
    })?;
    for (name, causal) in [("conv1d causal", true), ("conv1d same", false)] {
        run(name, gen(&[&[2, 6, 3], &[4, 3], &[3]]), &move |tp, v| {
            let y = tp.conv1d_depthwise(v[0], v[1], v[2], causal)?;
            weighted_sum(tp, y)
        })?;
    }
    run("layernorm", gen(&[&[2, 3, 5], &[5], &[5]]), &|tp, v| {
        let y = tp.layernorm(v[0], v[1], v[2], 1e-5)?;
        weighted_sum(tp, y)
    })?;
    run("softmax_cross_entropy", gen(&[&[3, 6]]), &|tp, v| {
        tp.softmax_cross_entropy(v[0], &[0, 5, 2])
    })?;
    run("embedding", gen(&[&[5, 3]]), &|tp, v| {
        let y = tp.embedding(v[0], &[0, 2, 2, 4, 1, 0], &[2, 3], Some(0))?;
        weighted_sum(tp, y)
    })?;
    let (b, l, e, s) = (2, 5, 3, 4);
    let mut scan = gen(&[&[b, l, e], &[b, l, e], &[e, s], &[b, l, s], &[b, l, s], &[e]]);
    scan[1].data_mut().iter_mut().for_each(|v| *v = 0.05 + 0.5 * v.abs());
    scan[2].data_mut().iter_mut().for_each(|v| *v = -0.2 - v.abs());
    run("selective_scan", scan, &|tp, v| {
        let y = tp.selective_scan(v[0], v[1], v[2], v[3], v[4], v[5])?;
        weighted_sum(tp, y)
    })?;
    Ok(out)
}

/// Check the full model loss with respect to every parameter, in training
/// mode with a fixed dropout mask. The initial parameters are perturbed by
/// `N(0, 0.3)` noise: at the default init many gradients sit near 1e-8,
/// where central differences are dominated by round-off.
pub fn model_check(cfg: ModelConfig, batch: &Batch, seed: u64) -> Result<GradReport> {
    let mut model = SigmaModel::<f64>::new(cfg, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let noise = rand_distr::Normal::new(0.0, 0.3).expect("valid std");
    let ids: Vec<ParamId> = model.params.ids().collect();
    for id in ids {
        for v in model.params.get_mut(id).data_mut() {
            *v += rng.sample(noise);
        }
    }
    check_params(&model.params, |tape, p| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        model.loss(tape, p, batch, &mut Mode::Train(&mut rng))
    })
}
