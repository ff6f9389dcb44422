//! Selective state-space block.

use crate::autodiff::{kernels, Tape, Var};
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::params::{Bound, Init, ParamId, ParamStore};
use crate::tensor::{Scalar, Tensor};

/// Sizes of one block.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MambaDims {
    pub dim: usize,
    pub inner: usize,
    pub state: usize,
    pub conv: usize,
    pub dt_rank: usize,
}

impl MambaDims {
    pub fn from_config(cfg: &ModelConfig) -> Self {
        MambaDims {
            dim: cfg.dim,
            inner: cfg.inner_dim(),
            state: cfg.d_state,
            conv: cfg.d_conv,
            dt_rank: cfg.dt_rank(),
        }
    }
}

/// Anything that maps `B×L×D` to `B×L×D` causally. The bidirectional wrapper
/// is written against this so it can be exercised with simple stand-ins.
pub trait SeqBlock<T: Scalar> {
    fn forward<'p>(&self, tape: &mut Tape<'p, T>, p: &Bound, x: Var) -> Result<Var>;
}

#[derive(Clone, Debug)]
pub struct MambaBlock {
    pub dims: MambaDims,
    pub in_proj: ParamId,
    pub conv_w: ParamId,
    pub conv_b: ParamId,
    pub x_proj: ParamId,
    pub dt_w: ParamId,
    pub dt_b: ParamId,
    pub a_log: ParamId,
    pub d_skip: ParamId,
    pub out_proj: ParamId,
}

const DT_MIN: f64 = 1e-3;
const DT_MAX: f64 = 0.1;

impl MambaBlock {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        dims: MambaDims,
        init: &mut Init,
    ) -> Self {
        let MambaDims {
            dim,
            inner,
            state,
            conv,
            dt_rank,
        } = dims;
        let conv_bound = 1.0 / (conv as f64).sqrt();
        let in_proj = store.add(format!("{prefix}.in_proj"), init.normal(vec![dim, 2 * inner], 0.02));
        let conv_w = store.add(format!("{prefix}.conv_w"), init.uniform(vec![conv, inner], conv_bound));
        let conv_b = store.add(format!("{prefix}.conv_b"), init.uniform(vec![inner], conv_bound));
        let x_proj = store.add(
            format!("{prefix}.x_proj"),
            init.normal(vec![inner, dt_rank + 2 * state], 0.02),
        );
        let dt_std = 1.0 / (dt_rank as f64).sqrt();
        let dt_w = store.add(format!("{prefix}.dt_w"), init.uniform(vec![dt_rank, inner], dt_std));
        // Bias chosen so softplus(bias) is log-uniform in [DT_MIN, DT_MAX].
        let dt_bias: Vec<f64> = (0..inner)
            .map(|_| {
                let dt = (init.sample_range(DT_MIN.ln(), DT_MAX.ln())).exp();
                dt + (-(-dt).exp_m1()).ln()
            })
            .collect();
        let dt_b = store.add(
            format!("{prefix}.dt_b"),
            Tensor::from_f64(vec![inner], &dt_bias).expect("sized"),
        );
        let a: Vec<f64> = (0..inner)
            .flat_map(|_| (1..=state).map(|n| (n as f64).ln()))
            .collect();
        let a_log = store.add(
            format!("{prefix}.a_log"),
            Tensor::from_f64(vec![inner, state], &a).expect("sized"),
        );
        let d_skip = store.add(format!("{prefix}.d_skip"), Tensor::full(vec![inner], T::one()));
        let out_proj = store.add(format!("{prefix}.out_proj"), init.normal(vec![inner, dim], 0.02));
        MambaBlock {
            dims,
            in_proj,
            conv_w,
            conv_b,
            x_proj,
            dt_w,
            dt_b,
            a_log,
            d_skip,
            out_proj,
        }
    }

    /// Fresh recurrent state for token-at-a-time evaluation of one sequence.
    pub fn initial_state<T: Scalar>(&self) -> MambaState<T> {
        MambaState {
            window: vec![T::zero(); (self.dims.conv - 1) * self.dims.inner],
            h: vec![T::zero(); self.dims.inner * self.dims.state],
        }
    }

    /// Advance one time step without a tape. Equivalent to the last row of
    /// [`SeqBlock::forward`] over the whole prefix.
    pub fn step<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        st: &mut MambaState<T>,
        x_t: &[T],
    ) -> Result<Vec<T>> {
        let MambaDims {
            dim,
            inner,
            state,
            conv,
            dt_rank,
        } = self.dims;
        if x_t.len() != dim {
            return Err(Error::dim("mamba_step", format!("input {} vs dim {dim}", x_t.len())));
        }
        let mut xz = vec![T::zero(); 2 * inner];
        kernels::gemm_acc(x_t, store.get(self.in_proj).data(), &mut xz, 1, dim, 2 * inner);
        let (u_raw, z) = xz.split_at(inner);

        let kw = store.get(self.conv_w).data();
        let mut u = store.get(self.conv_b).data().to_vec();
        for j in 0..conv {
            let src = if j + 1 == conv {
                u_raw
            } else {
                &st.window[j * inner..(j + 1) * inner]
            };
            for e in 0..inner {
                u[e] = u[e] + kw[j * inner + e] * src[e];
            }
        }
        if conv > 1 {
            st.window.copy_within(inner.., 0);
            let last = (conv - 2) * inner;
            st.window[last..].copy_from_slice(u_raw);
        }
        u.iter_mut().for_each(|v| *v = *v * kernels::sigmoid(*v));

        let width = dt_rank + 2 * state;
        let mut xd = vec![T::zero(); width];
        kernels::gemm_acc(&u, store.get(self.x_proj).data(), &mut xd, 1, inner, width);
        let (dt_in, bc) = xd.split_at(dt_rank);
        let (b_t, c_t) = bc.split_at(state);
        let mut delta = store.get(self.dt_b).data().to_vec();
        kernels::gemm_acc(dt_in, store.get(self.dt_w).data(), &mut delta, 1, dt_rank, inner);

        let a_log = store.get(self.a_log).data();
        let d_skip = store.get(self.d_skip).data();
        let mut y = vec![T::zero(); inner];
        for e in 0..inner {
            let dt = kernels::softplus(delta[e]);
            let mut acc = T::zero();
            for s in 0..state {
                let i = e * state + s;
                let a = -a_log[i].exp();
                st.h[i] = (dt * a).exp() * st.h[i] + dt * b_t[s] * u[e];
                acc = acc + c_t[s] * st.h[i];
            }
            let gate = z[e] * kernels::sigmoid(z[e]);
            y[e] = (acc + d_skip[e] * u[e]) * gate;
        }
        let mut out = vec![T::zero(); dim];
        kernels::gemm_acc(&y, store.get(self.out_proj).data(), &mut out, 1, inner, dim);
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                op: "mamba_step",
                step: None,
            });
        }
        Ok(out)
    }
}

impl<T: Scalar> SeqBlock<T> for MambaBlock {
    fn forward<'p>(&self, tape: &mut Tape<'p, T>, p: &Bound, x: Var) -> Result<Var> {
        let MambaDims {
            dim,
            inner,
            state,
            dt_rank,
            ..
        } = self.dims;
        let sx = tape.shape(x).to_vec();
        if sx.len() != 3 || sx[2] != dim {
            return Err(Error::dim("mamba", format!("input {sx:?}, dim {dim}")));
        }
        let xz = tape.matmul(x, p[self.in_proj])?;
        let u = tape.narrow(xz, 2, 0, inner)?;
        let z = tape.narrow(xz, 2, inner, inner)?;
        let u = tape.conv1d_depthwise(u, p[self.conv_w], p[self.conv_b], true)?;
        let u = tape.silu(u)?;

        let xd = tape.matmul(u, p[self.x_proj])?;
        let dt_in = tape.narrow(xd, 2, 0, dt_rank)?;
        let bm = tape.narrow(xd, 2, dt_rank, state)?;
        let cm = tape.narrow(xd, 2, dt_rank + state, state)?;
        let delta = tape.matmul(dt_in, p[self.dt_w])?;
        let delta = tape.add(delta, p[self.dt_b])?;
        let delta = tape.softplus(delta)?;
        let a = tape.exp(p[self.a_log])?;
        let a = tape.neg(a)?;

        let y = tape.selective_scan(u, delta, a, bm, cm, p[self.d_skip])?;
        let gate = tape.silu(z)?;
        let y = tape.mul(y, gate)?;
        tape.matmul(y, p[self.out_proj])
    }
}

/// Recurrent state of one sequence: the last `k−1` conv inputs and the
/// `E×S` hidden state.
#[derive(Clone, Debug, PartialEq)]
pub struct MambaState<T> {
    window: Vec<T>,
    h: Vec<T>,
}

impl<T: Scalar> MambaState<T> {
    pub fn hidden(&self) -> &[T] {
        &self.h
    }
}
