//! Dense selective gate: `SiLU(δ) + σ(δ)` over a dense + causal conv feature.

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::params::{Bound, Init, ParamId, ParamStore};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug)]
pub struct DsGate {
    pub w1: ParamId,
    pub b1: ParamId,
    pub conv_w: ParamId,
    pub conv_b: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl DsGate {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        dim: usize,
        conv: usize,
        init: &mut Init,
    ) -> Self {
        let bound = 1.0 / (conv as f64).sqrt();
        DsGate {
            w1: store.add(format!("{prefix}.w1"), init.normal(vec![dim, dim], 0.02)),
            b1: store.add(format!("{prefix}.b1"), Tensor::zeros(vec![dim])),
            conv_w: store.add(format!("{prefix}.conv_w"), init.uniform(vec![conv, dim], bound)),
            conv_b: store.add(format!("{prefix}.conv_b"), Tensor::zeros(vec![dim])),
            w2: store.add(format!("{prefix}.w2"), init.normal(vec![dim, dim], 0.02)),
            b2: store.add(format!("{prefix}.b2"), Tensor::zeros(vec![dim])),
        }
    }

    pub fn ids(&self) -> [ParamId; 6] {
        [self.w1, self.b1, self.conv_w, self.conv_b, self.w2, self.b2]
    }

    pub fn forward<'p, T: Scalar>(&self, tape: &mut Tape<'p, T>, p: &Bound, h: Var) -> Result<Var> {
        let g = tape.matmul(h, p[self.w1])?;
        let g = tape.add(g, p[self.b1])?;
        let g = tape.conv1d_depthwise(g, p[self.conv_w], p[self.conv_b], true)?;
        let d = tape.matmul(g, p[self.w2])?;
        let d = tape.add(d, p[self.b2])?;
        let a = tape.silu(d)?;
        let b = tape.sigmoid(d)?;
        tape.add(a, b)
    }
}
