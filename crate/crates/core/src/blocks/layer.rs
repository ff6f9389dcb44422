//! One SIGMA layer and the layer stack.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::flip::batch_flip_indices;
use super::{DsGate, FeGru};
use crate::autodiff::{Tape, Var};
use crate::config::{Ablation, ModelConfig};
use crate::error::{Error, Result};
use crate::mamba::{MambaBlock, MambaDims, SeqBlock};
use crate::params::{Bound, Init, ParamId, ParamStore};
use crate::tensor::{Scalar, Tensor};

/// Forward-pass mode. Dropout masks are drawn from the training stream.
pub enum Mode<'r> {
    Eval,
    Train(&'r mut ChaCha8Rng),
}

/// Per-batch settings shared by every layer of a pass.
#[derive(Clone, Copy, Debug)]
pub struct LayerCtx<'a> {
    /// True lengths of the left-padded rows.
    pub lens: &'a [usize],
    pub flip_keep: usize,
    pub ablation: Ablation,
    pub dropout: f64,
    pub eps: f64,
}

impl<'a> LayerCtx<'a> {
    pub fn new(cfg: &ModelConfig, lens: &'a [usize]) -> Self {
        LayerCtx {
            lens,
            flip_keep: cfg.effective_flip_keep(),
            ablation: cfg.ablation,
            dropout: cfg.dropout,
            eps: cfg.layernorm_eps,
        }
    }
}

/// Bidirectional combine: the flipped branch output is flipped back so both
/// branches are aligned per position before the gated sum. `flip = None`
/// feeds both blocks the same input; `gate = None` sums with unit weights.
pub fn pf_mamba<'p, T: Scalar, B: SeqBlock<T>>(
    tape: &mut Tape<'p, T>,
    p: &Bound,
    h: Var,
    fwd: &B,
    bwd: &B,
    gate: Option<&DsGate>,
    flip: Option<Vec<usize>>,
) -> Result<Var> {
    let m0 = fwd.forward(tape, p, h)?;
    let (hf, mf) = match flip {
        Some(src) => {
            let hf = tape.permute_time(h, src.clone())?;
            let raw = bwd.forward(tape, p, hf)?;
            // The flip is an involution, so the same indices undo it.
            (hf, tape.permute_time(raw, src)?)
        }
        None => (h, bwd.forward(tape, p, h)?),
    };
    match gate {
        Some(g) => {
            let g0 = g.forward(tape, p, h)?;
            let gf = g.forward(tape, p, hf)?;
            let a = tape.mul(g0, m0)?;
            let b = tape.mul(gf, mf)?;
            tape.add(a, b)
        }
        None => tape.add(m0, mf),
    }
}

#[derive(Clone, Debug)]
pub struct SigmaLayer {
    pub dim: usize,
    pub mamba_fwd: MambaBlock,
    pub mamba_flip: MambaBlock,
    pub gate: DsGate,
    pub fegru: FeGru,
    pub a1: ParamId,
    pub a2: ParamId,
    pub w_mix: ParamId,
    pub b_mix: ParamId,
    pub w_up: ParamId,
    pub b_up: ParamId,
    pub w_down: ParamId,
    pub b_down: ParamId,
    pub ln_gain: ParamId,
    pub ln_bias: ParamId,
}

impl SigmaLayer {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        cfg: &ModelConfig,
        init: &mut Init,
    ) -> Self {
        let d = cfg.dim;
        let dims = MambaDims::from_config(cfg);
        let mamba_fwd = MambaBlock::new(store, &format!("{prefix}.mamba_fwd"), dims, init);
        let mamba_flip = MambaBlock::new(store, &format!("{prefix}.mamba_flip"), dims, init);
        let gate = DsGate::new(store, &format!("{prefix}.gate"), d, cfg.d_conv, init);
        let fegru = FeGru::new(store, &format!("{prefix}.fegru"), d, cfg.d_conv, init);
        let half = T::c(0.5);
        SigmaLayer {
            dim: d,
            mamba_fwd,
            mamba_flip,
            gate,
            fegru,
            a1: store.add(format!("{prefix}.a1"), Tensor::scalar(half)),
            a2: store.add(format!("{prefix}.a2"), Tensor::scalar(half)),
            w_mix: store.add(format!("{prefix}.w_mix"), init.normal(vec![d, d], 0.02)),
            b_mix: store.add(format!("{prefix}.b_mix"), Tensor::zeros(vec![d])),
            w_up: store.add(format!("{prefix}.w_up"), init.normal(vec![d, 4 * d], 0.02)),
            b_up: store.add(format!("{prefix}.b_up"), Tensor::zeros(vec![4 * d])),
            w_down: store.add(format!("{prefix}.w_down"), init.normal(vec![4 * d, d], 0.02)),
            b_down: store.add(format!("{prefix}.b_down"), Tensor::zeros(vec![d])),
            ln_gain: store.add(format!("{prefix}.ln_gain"), Tensor::full(vec![d], T::one())),
            ln_bias: store.add(format!("{prefix}.ln_bias"), Tensor::zeros(vec![d])),
        }
    }

    /// Bidirectional branch of this layer under `ctx`.
    pub fn pf_mamba<'p, T: Scalar>(
        &self,
        tape: &mut Tape<'p, T>,
        p: &Bound,
        h: Var,
        ctx: &LayerCtx<'_>,
    ) -> Result<Var> {
        let s = tape.shape(h).to_vec();
        if s.len() != 3 || s[0] != ctx.lens.len() {
            return Err(Error::dim(
                "pf_mamba",
                format!("input {s:?} with {} lengths", ctx.lens.len()),
            ));
        }
        let flip = (!ctx.ablation.no_flip).then(|| batch_flip_indices(s[1], ctx.lens, ctx.flip_keep));
        let gate = (!ctx.ablation.no_ds_gate).then_some(&self.gate);
        pf_mamba(tape, p, h, &self.mamba_fwd, &self.mamba_flip, gate, flip)
    }

    /// Mixing of the two branches, before the linear layer.
    pub fn mix<'p, T: Scalar>(
        &self,
        tape: &mut Tape<'p, T>,
        p: &Bound,
        h: Var,
        ctx: &LayerCtx<'_>,
    ) -> Result<Var> {
        let m = self.pf_mamba(tape, p, h, ctx)?;
        if ctx.ablation.no_fegru {
            return Ok(m);
        }
        let f = self.fegru.forward(tape, p, h)?;
        let a = tape.mul(m, p[self.a1])?;
        let b = tape.mul(f, p[self.a2])?;
        tape.add(a, b)
    }

    pub fn forward<'p, T: Scalar>(
        &self,
        tape: &mut Tape<'p, T>,
        p: &Bound,
        h: Var,
        ctx: &LayerCtx<'_>,
        mode: &mut Mode<'_>,
    ) -> Result<Var> {
        let z = self.mix(tape, p, h, ctx)?;
        let z = tape.matmul(z, p[self.w_mix])?;
        let z = tape.add(z, p[self.b_mix])?;
        let up = tape.matmul(z, p[self.w_up])?;
        let up = tape.add(up, p[self.b_up])?;
        let up = tape.gelu(up)?;
        let r = tape.matmul(up, p[self.w_down])?;
        let mut r = tape.add(r, p[self.b_down])?;
        if let Mode::Train(rng) = mode {
            r = dropout(tape, r, ctx.dropout, rng)?;
        }
        let res = tape.add(r, h)?;
        tape.layernorm(res, p[self.ln_gain], p[self.ln_bias], ctx.eps)
    }
}

/// Inverted dropout with a mask drawn from `rng`.
pub fn dropout<'p, T: Scalar>(
    tape: &mut Tape<'p, T>,
    x: Var,
    rate: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Var> {
    if rate <= 0.0 {
        return Ok(x);
    }
    let shape = tape.shape(x).to_vec();
    let n = shape.iter().product();
    let scale = T::c(1.0 / (1.0 - rate));
    let mask = (0..n)
        .map(|_| if rng.gen::<f64>() < rate { T::zero() } else { scale })
        .collect();
    let m = tape.constant(Tensor::new(shape, mask)?);
    tape.mul(x, m)
}

/// Sequential composition of layers.
pub fn sigma_stack<'p, T: Scalar>(
    tape: &mut Tape<'p, T>,
    p: &Bound,
    layers: &[SigmaLayer],
    h: Var,
    ctx: &LayerCtx<'_>,
    mode: &mut Mode<'_>,
) -> Result<Var> {
    if layers.is_empty() {
        return Err(Error::Contract("sigma_stack needs at least one layer".into()));
    }
    layers
        .iter()
        .try_fold(h, |h, layer| layer.forward(tape, p, h, ctx, mode))
}
