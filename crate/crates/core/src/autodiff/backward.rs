use super::kernels::{self, ScanGrads};
use super::{Binary, Op, Tape, Unary, Var};
use crate::error::{Error, Result};
use crate::tensor::Scalar;

type Grads<T> = Vec<Option<Vec<T>>>;

fn slot<T: Scalar>(grads: &mut Grads<T>, v: Var, len: usize) -> &mut [T] {
    grads[v.0].get_or_insert_with(|| vec![T::zero(); len])
}

impl<T: Scalar> Tape<'_, T> {
    /// Back-propagate from a scalar `loss`, accumulating into every
    /// differentiable leaf. Calling it again without [`Tape::zero_grad`]
    /// adds to the existing leaf gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        if !self.grad_enabled {
            return Err(Error::Contract("backward on an inference tape".into()));
        }
        let n = self.nodes.len();
        let mut grads: Grads<T> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else {
                continue;
            };
            if matches!(self.nodes[i].op, Op::Leaf) {
                if self.leaf_grads.len() < n {
                    self.leaf_grads.resize_with(n, || None);
                }
                match &mut self.leaf_grads[i] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a = *a + b),
                    empty => *empty = Some(g),
                }
                continue;
            }
            self.propagate(i, &g, &mut grads);
        }
        Ok(())
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, i: usize, g: &[T], grads: &mut Grads<T>) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul {
                a,
                b,
                batch,
                m,
                k,
                n,
                b_batched,
            } => {
                let (av, bv) = (self.value(a), self.value(b));
                if self.wants(a) {
                    let ga = slot(grads, a, av.len());
                    if b_batched {
                        for t in 0..batch {
                            kernels::gemm_nt_acc(
                                &g[t * m * n..(t + 1) * m * n],
                                &bv[t * k * n..(t + 1) * k * n],
                                &mut ga[t * m * k..(t + 1) * m * k],
                                m,
                                k,
                                n,
                            );
                        }
                    } else {
                        kernels::gemm_nt_acc(g, bv, ga, batch * m, k, n);
                    }
                }
                if self.wants(b) {
                    let gb = slot(grads, b, bv.len());
                    if b_batched {
                        for t in 0..batch {
                            kernels::gemm_tn_acc(
                                &av[t * m * k..(t + 1) * m * k],
                                &g[t * m * n..(t + 1) * m * n],
                                &mut gb[t * k * n..(t + 1) * k * n],
                                m,
                                k,
                                n,
                            );
                        }
                    } else {
                        kernels::gemm_tn_acc(av, g, gb, batch * m, k, n);
                    }
                }
            }
            &Op::Transpose { x, rows, cols } => {
                let gx = slot(grads, x, rows * cols);
                for i in 0..rows {
                    for j in 0..cols {
                        gx[i * cols + j] = gx[i * cols + j] + g[j * rows + i];
                    }
                }
            }
            &Op::Binary { kind, a, b } => {
                let (av, bv) = (self.value(a), self.value(b));
                let (na, nb) = (av.len(), bv.len());
                if self.wants(a) {
                    let ga = slot(grads, a, na);
                    for (idx, &gi) in g.iter().enumerate() {
                        let d = match kind {
                            Binary::Add | Binary::Sub => gi,
                            Binary::Mul => gi * bv[idx % nb],
                        };
                        ga[idx % na] = ga[idx % na] + d;
                    }
                }
                if self.wants(b) {
                    let gb = slot(grads, b, nb);
                    for (idx, &gi) in g.iter().enumerate() {
                        let d = match kind {
                            Binary::Add => gi,
                            Binary::Sub => -gi,
                            Binary::Mul => gi * av[idx % na],
                        };
                        gb[idx % nb] = gb[idx % nb] + d;
                    }
                }
            }
            &Op::Unary { kind, x } => {
                let xv = self.value(x);
                let y = &node.value;
                let gx = slot(grads, x, xv.len());
                for idx in 0..xv.len() {
                    let (xi, yi) = (xv[idx], y[idx]);
                    let d = match kind {
                        Unary::Sigmoid => yi * (T::one() - yi),
                        Unary::Tanh => T::one() - yi * yi,
                        Unary::Silu => {
                            let s = kernels::sigmoid(xi);
                            s * (T::one() + xi * (T::one() - s))
                        }
                        Unary::Gelu => kernels::gelu_grad(xi),
                        Unary::Relu => {
                            if xi > T::zero() {
                                T::one()
                            } else {
                                T::zero()
                            }
                        }
                        Unary::Exp => yi,
                        Unary::Softplus => kernels::sigmoid(xi),
                        Unary::Neg => -T::one(),
                    };
                    gx[idx] = gx[idx] + g[idx] * d;
                }
            }
            &Op::Affine { x, scale } => {
                let gx = slot(grads, x, g.len());
                gx.iter_mut().zip(g).for_each(|(a, &b)| *a = *a + scale * b);
            }
            &Op::Sum { x } => {
                let len = self.value(x).len();
                let gx = slot(grads, x, len);
                gx.iter_mut().for_each(|a| *a = *a + g[0]);
            }
            &Op::Mean { x } => {
                let len = self.value(x).len();
                let d = g[0] / T::c(len as f64);
                let gx = slot(grads, x, len);
                gx.iter_mut().for_each(|a| *a = *a + d);
            }
            &Op::Reshape { x } => {
                let gx = slot(grads, x, g.len());
                gx.iter_mut().zip(g).for_each(|(a, &b)| *a = *a + b);
            }
            &Op::Narrow {
                x,
                outer,
                axis_len,
                inner,
                start,
                len,
            } => {
                let gx = slot(grads, x, outer * axis_len * inner);
                for o in 0..outer {
                    let base = (o * axis_len + start) * inner;
                    let src = &g[o * len * inner..(o + 1) * len * inner];
                    gx[base..base + len * inner]
                        .iter_mut()
                        .zip(src)
                        .for_each(|(a, &b)| *a = *a + b);
                }
            }
            Op::StackTime { xs, batch, dim } => {
                let (batch, dim, len) = (*batch, *dim, xs.len());
                for (t, &v) in xs.iter().enumerate() {
                    if !self.wants(v) {
                        continue;
                    }
                    let gx = slot(grads, v, batch * dim);
                    for b in 0..batch {
                        let src = &g[(b * len + t) * dim..(b * len + t + 1) * dim];
                        gx[b * dim..(b + 1) * dim]
                            .iter_mut()
                            .zip(src)
                            .for_each(|(a, &s)| *a = *a + s);
                    }
                }
            }
            Op::PermuteTime { x, src, len, dim } => {
                let (len, dim) = (*len, *dim);
                let gx = slot(grads, *x, g.len());
                for (row, &from) in src.iter().enumerate() {
                    let b = row / len;
                    let to = (b * len + from) * dim;
                    gx[to..to + dim]
                        .iter_mut()
                        .zip(&g[row * dim..(row + 1) * dim])
                        .for_each(|(a, &s)| *a = *a + s);
                }
            }
            &Op::Conv1d {
                x,
                kernel,
                bias,
                dims,
                left_pad,
            } => {
                let (batch, len, ch, k) = dims;
                let (xv, kv) = (self.value(x), self.value(kernel));
                let (want_x, want_k, want_b) =
                    (self.wants(x), self.wants(kernel), self.wants(bias));
                let mut gx = want_x.then(|| vec![T::zero(); xv.len()]);
                let mut gk = want_k.then(|| vec![T::zero(); kv.len()]);
                let mut gb = want_b.then(|| vec![T::zero(); ch]);
                for b in 0..batch {
                    for t in 0..len {
                        let go = &g[(b * len + t) * ch..(b * len + t + 1) * ch];
                        if let Some(gb) = gb.as_mut() {
                            gb.iter_mut().zip(go).for_each(|(a, &s)| *a = *a + s);
                        }
                        for j in 0..k {
                            let Some(s) = (t + j).checked_sub(left_pad) else {
                                continue;
                            };
                            if s >= len {
                                continue;
                            }
                            let xo = (b * len + s) * ch;
                            for c in 0..ch {
                                if let Some(gx) = gx.as_mut() {
                                    gx[xo + c] = gx[xo + c] + kv[j * ch + c] * go[c];
                                }
                                if let Some(gk) = gk.as_mut() {
                                    gk[j * ch + c] = gk[j * ch + c] + xv[xo + c] * go[c];
                                }
                            }
                        }
                    }
                }
                for (v, buf) in [(x, gx), (kernel, gk), (bias, gb)] {
                    if let Some(buf) = buf {
                        let dst = slot(grads, v, buf.len());
                        dst.iter_mut().zip(&buf).for_each(|(a, &s)| *a = *a + s);
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                dim,
                xhat,
                rstd,
            } => {
                let dim = *dim;
                let gv = self.value(*gain);
                let rows = g.len() / dim;
                if self.wants(*gain) {
                    let gg = slot(grads, *gain, dim);
                    for r in 0..rows {
                        for j in 0..dim {
                            gg[j] = gg[j] + g[r * dim + j] * xhat[r * dim + j];
                        }
                    }
                }
                if self.wants(*bias) {
                    let gb = slot(grads, *bias, dim);
                    for r in 0..rows {
                        for j in 0..dim {
                            gb[j] = gb[j] + g[r * dim + j];
                        }
                    }
                }
                if self.wants(*x) {
                    let gx = slot(grads, *x, g.len());
                    let inv_d = T::c(1.0 / dim as f64);
                    for r in 0..rows {
                        let gr = &g[r * dim..(r + 1) * dim];
                        let hr = &xhat[r * dim..(r + 1) * dim];
                        let mut mean_dh = T::zero();
                        let mut mean_dh_h = T::zero();
                        for j in 0..dim {
                            let dh = gr[j] * gv[j];
                            mean_dh = mean_dh + dh;
                            mean_dh_h = mean_dh_h + dh * hr[j];
                        }
                        mean_dh = mean_dh * inv_d;
                        mean_dh_h = mean_dh_h * inv_d;
                        for j in 0..dim {
                            let dh = gr[j] * gv[j];
                            gx[r * dim + j] =
                                gx[r * dim + j] + rstd[r] * (dh - mean_dh - hr[j] * mean_dh_h);
                        }
                    }
                }
            }
            Op::SoftmaxXent {
                logits,
                targets,
                probs,
            } => {
                let rows = targets.len();
                let classes = probs.len() / rows;
                let scale = g[0] / T::c(rows as f64);
                let gl = slot(grads, *logits, probs.len());
                for (r, &t) in targets.iter().enumerate() {
                    for c in 0..classes {
                        let onehot = if c == t { T::one() } else { T::zero() };
                        let i = r * classes + c;
                        gl[i] = gl[i] + scale * (probs[i] - onehot);
                    }
                }
            }
            Op::Embedding {
                table,
                ids,
                dim,
                padding,
            } => {
                let dim = *dim;
                let len = self.value(*table).len();
                let gt = slot(grads, *table, len);
                for (r, &id) in ids.iter().enumerate() {
                    if Some(id) == *padding {
                        continue;
                    }
                    gt[id * dim..(id + 1) * dim]
                        .iter_mut()
                        .zip(&g[r * dim..(r + 1) * dim])
                        .for_each(|(a, &s)| *a = *a + s);
                }
            }
            &Op::Scan {
                u,
                delta,
                a,
                b,
                c,
                d,
                dims,
            } => {
                let vals = [u, delta, a, b, c, d].map(|v| self.value(v));
                let mut bufs = vals.map(|v| vec![T::zero(); v.len()]);
                {
                    let [gu, gdt, ga, gb, gc, gd] = &mut bufs;
                    kernels::selective_scan_backward(
                        vals[0],
                        vals[1],
                        vals[2],
                        vals[3],
                        vals[4],
                        vals[5],
                        g,
                        ScanGrads {
                            u: gu,
                            delta: gdt,
                            a: ga,
                            bm: gb,
                            cm: gc,
                            d: gd,
                        },
                        dims,
                    );
                }
                for (v, buf) in [u, delta, a, b, c, d].into_iter().zip(bufs) {
                    if self.wants(v) {
                        let dst = slot(grads, v, buf.len());
                        dst.iter_mut().zip(&buf).for_each(|(x, &s)| *x = *x + s);
                    }
                }
            }
        }
    }
}
