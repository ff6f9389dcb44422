//! Causal convolution followed by a GRU over time.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{Bound, Init, ParamId, ParamStore};
use crate::tensor::{Scalar, Tensor};

/// Gate weights are `2D×D`; rows `0..D` act on the previous state and rows
/// `D..2D` on the convolved input.
#[derive(Clone, Debug)]
pub struct FeGru {
    pub dim: usize,
    pub conv_w: ParamId,
    pub conv_b: ParamId,
    pub wz: ParamId,
    pub bz: ParamId,
    pub wr: ParamId,
    pub br: ParamId,
    pub w: ParamId,
    pub b: ParamId,
}

impl FeGru {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        dim: usize,
        conv: usize,
        init: &mut Init,
    ) -> Self {
        let bound = 1.0 / (conv as f64).sqrt();
        let mut mat = |name: &str, store: &mut ParamStore<T>| {
            store.add(format!("{prefix}.{name}"), init.normal(vec![2 * dim, dim], 0.02))
        };
        let wz = mat("wz", store);
        let wr = mat("wr", store);
        let w = mat("w", store);
        FeGru {
            dim,
            conv_w: store.add(format!("{prefix}.conv_w"), init.uniform(vec![conv, dim], bound)),
            conv_b: store.add(format!("{prefix}.conv_b"), Tensor::zeros(vec![dim])),
            wz,
            bz: store.add(format!("{prefix}.bz"), Tensor::zeros(vec![dim])),
            wr,
            br: store.add(format!("{prefix}.br"), Tensor::zeros(vec![dim])),
            w,
            b: store.add(format!("{prefix}.b"), Tensor::zeros(vec![dim])),
        }
    }

    pub fn ids(&self) -> [ParamId; 8] {
        [
            self.conv_w, self.conv_b, self.wz, self.bz, self.wr, self.br, self.w, self.b,
        ]
    }

    pub fn forward<'p, T: Scalar>(&self, tape: &mut Tape<'p, T>, p: &Bound, h: Var) -> Result<Var> {
        let s = tape.shape(h).to_vec();
        if s.len() != 3 || s[2] != self.dim {
            return Err(Error::dim("fe_gru", format!("input {s:?}, dim {}", self.dim)));
        }
        let (batch, len, d) = (s[0], s[1], s[2]);
        let c = tape.conv1d_depthwise(h, p[self.conv_w], p[self.conv_b], true)?;

        // Input halves of all three gates are computed for every step at once.
        let mut split = |w: ParamId, b: ParamId| -> Result<(Var, Var)> {
            let w_f = tape.narrow(p[w], 0, 0, d)?;
            let w_c = tape.narrow(p[w], 0, d, d)?;
            let xc = tape.matmul(c, w_c)?;
            Ok((w_f, tape.add(xc, p[b])?))
        };
        let (wz_f, cz) = split(self.wz, self.bz)?;
        let (wr_f, cr) = split(self.wr, self.br)?;
        let (w_f, ch) = split(self.w, self.b)?;

        let mut f = tape.zeros(vec![batch, d]);
        let mut out = Vec::with_capacity(len);
        for t in 0..len {
            let cz_t = tape.select(cz, 1, t)?;
            let cr_t = tape.select(cr, 1, t)?;
            let ch_t = tape.select(ch, 1, t)?;
            let z = tape.matmul(f, wz_f)?;
            let z = tape.add(z, cz_t)?;
            let z = tape.sigmoid(z)?;
            let r = tape.matmul(f, wr_f)?;
            let r = tape.add(r, cr_t)?;
            let r = tape.sigmoid(r)?;
            let rf = tape.mul(r, f)?;
            let cand = tape.matmul(rf, w_f)?;
            let cand = tape.add(cand, ch_t)?;
            let cand = tape.tanh(cand)?;
            let keep = tape.mul(z, f)?;
            let one_minus_z = tape.affine(z, -T::one(), T::one())?;
            let new = tape.mul(one_minus_z, cand)?;
            f = tape.add(keep, new)?;
            out.push(f);
        }
        tape.stack_time(&out)
    }
}
