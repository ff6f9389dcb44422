//! Plain slice kernels shared by the forward and backward passes.
//!
//! Everything here is single-threaded and allocation-free apart from the
//! output buffers the caller hands in.

use crate::tensor::Scalar;

/// `c[m×n] += a[m×k] · b[k×n]`
pub fn gemm_acc<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let c_row = &mut c[i * n..(i + 1) * n];
        for (p, &a_ip) in a_row.iter().enumerate() {
            if a_ip == T::zero() {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (c_ij, &b_pj) in c_row.iter_mut().zip(b_row) {
                *c_ij = *c_ij + a_ip * b_pj;
            }
        }
    }
}

/// `c[m×k] += g[m×n] · b[k×n]ᵀ`
pub fn gemm_nt_acc<T: Scalar>(g: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let g_row = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let b_row = &b[p * n..(p + 1) * n];
            let dot = g_row
                .iter()
                .zip(b_row)
                .fold(T::zero(), |acc, (&x, &y)| acc + x * y);
            c[i * k + p] = c[i * k + p] + dot;
        }
    }
}

/// `c[k×n] += a[m×k]ᵀ · g[m×n]`
pub fn gemm_tn_acc<T: Scalar>(a: &[T], g: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let g_row = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let a_ip = a[i * k + p];
            if a_ip == T::zero() {
                continue;
            }
            let c_row = &mut c[p * n..(p + 1) * n];
            for (c_pj, &g_ij) in c_row.iter_mut().zip(g_row) {
                *c_pj = *c_pj + a_ip * g_ij;
            }
        }
    }
}

#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[inline]
pub fn softplus<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

const GELU_COEF: f64 = 0.044_715;

#[inline]
pub fn gelu<T: Scalar>(x: T) -> T {
    let k = T::c((2.0 / std::f64::consts::PI).sqrt());
    let inner = k * (x + T::c(GELU_COEF) * x * x * x);
    T::c(0.5) * x * (T::one() + inner.tanh())
}

#[inline]
pub fn gelu_grad<T: Scalar>(x: T) -> T {
    let k = T::c((2.0 / std::f64::consts::PI).sqrt());
    let inner = k * (x + T::c(GELU_COEF) * x * x * x);
    let t = inner.tanh();
    let d_inner = k * (T::one() + T::c(3.0 * GELU_COEF) * x * x);
    T::c(0.5) * (T::one() + t) + T::c(0.5) * x * (T::one() - t * t) * d_inner
}

/// Depthwise 1-D convolution along time for `x[B×L×C]` with `kernel[k×C]`.
/// Tap `j` reads position `t + j - left_pad`; out-of-range reads are zero.
pub fn conv1d_depthwise<T: Scalar>(
    x: &[T],
    kernel: &[T],
    bias: &[T],
    out: &mut [T],
    (batch, len, ch, k): (usize, usize, usize, usize),
    left_pad: usize,
) {
    for b in 0..batch {
        for t in 0..len {
            let o = &mut out[(b * len + t) * ch..(b * len + t + 1) * ch];
            o.copy_from_slice(bias);
            for j in 0..k {
                let Some(s) = (t + j).checked_sub(left_pad) else {
                    continue;
                };
                if s >= len {
                    continue;
                }
                let xs = &x[(b * len + s) * ch..(b * len + s + 1) * ch];
                let kr = &kernel[j * ch..(j + 1) * ch];
                for ((o_c, &x_c), &k_c) in o.iter_mut().zip(xs).zip(kr) {
                    *o_c = *o_c + k_c * x_c;
                }
            }
        }
    }
}

/// Shapes of a selective scan: batch, length, channels, state size.
#[derive(Clone, Copy, Debug)]
pub struct ScanDims {
    pub batch: usize,
    pub len: usize,
    pub inner: usize,
    pub state: usize,
}

/// Selective state-space scan.
///
/// For every channel `e` and state slot `s`:
/// `h_t = exp(Δ_t·A) ⊙ h_{t−1} + Δ_t·B_t·u_t`, `y_t = C_t·h_t + D⊙u_t`, `h_0 = 0`.
///
/// `u, delta: [B×L×E]`, `a: [E×S]`, `bm, cm: [B×L×S]`, `d: [E]`, `y: [B×L×E]`.
/// Returns the first time step whose output is non-finite, if any.
#[allow(clippy::too_many_arguments)]
pub fn selective_scan<T: Scalar>(
    u: &[T],
    delta: &[T],
    a: &[T],
    bm: &[T],
    cm: &[T],
    d: &[T],
    y: &mut [T],
    dims: ScanDims,
) -> Option<usize> {
    let ScanDims {
        batch,
        len,
        inner,
        state,
    } = dims;
    let mut h = vec![T::zero(); inner * state];
    let mut bad_step = None;
    for b in 0..batch {
        h.iter_mut().for_each(|v| *v = T::zero());
        for t in 0..len {
            let row = b * len + t;
            let b_t = &bm[row * state..(row + 1) * state];
            let c_t = &cm[row * state..(row + 1) * state];
            for e in 0..inner {
                let u_te = u[row * inner + e];
                let dt = delta[row * inner + e];
                let du = dt * u_te;
                let h_e = &mut h[e * state..(e + 1) * state];
                let a_e = &a[e * state..(e + 1) * state];
                let mut acc = T::zero();
                for s in 0..state {
                    let hs = (dt * a_e[s]).exp() * h_e[s] + du * b_t[s];
                    h_e[s] = hs;
                    acc = acc + c_t[s] * hs;
                }
                let out = acc + d[e] * u_te;
                if bad_step.is_none() && !out.is_finite() {
                    bad_step = Some(t);
                }
                y[row * inner + e] = out;
            }
        }
    }
    bad_step
}

/// Gradient buffers of a selective scan, all accumulated into.
pub struct ScanGrads<'a, T> {
    pub u: &'a mut [T],
    pub delta: &'a mut [T],
    pub a: &'a mut [T],
    pub bm: &'a mut [T],
    pub cm: &'a mut [T],
    pub d: &'a mut [T],
}

/// Reverse-time adjoint of [`selective_scan`]. Hidden states are recomputed
/// per batch row rather than stored by the forward pass.
#[allow(clippy::too_many_arguments, clippy::needless_range_loop)]
pub fn selective_scan_backward<T: Scalar>(
    u: &[T],
    delta: &[T],
    a: &[T],
    bm: &[T],
    cm: &[T],
    d: &[T],
    gy: &[T],
    grads: ScanGrads<'_, T>,
    dims: ScanDims,
) {
    let ScanDims {
        batch,
        len,
        inner,
        state,
    } = dims;
    let es = inner * state;
    // hs[t] holds h_t for t = 0..=len with hs[0] = 0; decays[t] holds
    // exp(Δ_t·A) so the reverse sweep needs no further exponentials.
    let mut hs = vec![T::zero(); (len + 1) * es];
    let mut decays = vec![T::zero(); len * es];
    let mut gh = vec![T::zero(); es];
    for b in 0..batch {
        for t in 0..len {
            let row = b * len + t;
            let b_t = &bm[row * state..(row + 1) * state];
            let (prev, next) = hs.split_at_mut((t + 1) * es);
            let h_prev = &prev[t * es..];
            let h_next = &mut next[..es];
            let decay_t = &mut decays[t * es..(t + 1) * es];
            for e in 0..inner {
                let dt = delta[row * inner + e];
                let du = dt * u[row * inner + e];
                for s in 0..state {
                    let i = e * state + s;
                    decay_t[i] = (dt * a[i]).exp();
                    h_next[i] = decay_t[i] * h_prev[i] + du * b_t[s];
                }
            }
        }

        gh.iter_mut().for_each(|v| *v = T::zero());
        for t in (0..len).rev() {
            let row = b * len + t;
            let b_t = &bm[row * state..(row + 1) * state];
            let c_t = &cm[row * state..(row + 1) * state];
            let h_t = &hs[(t + 1) * es..(t + 2) * es];
            let h_prev = &hs[t * es..(t + 1) * es];
            let decay_t = &decays[t * es..(t + 1) * es];
            for e in 0..inner {
                let ie = row * inner + e;
                let g = gy[ie];
                let u_te = u[ie];
                let dt = delta[ie];
                grads.d[e] = grads.d[e] + g * u_te;
                let mut du = g * d[e];
                let mut ddt = T::zero();
                for s in 0..state {
                    let i = e * state + s;
                    // readout y_t = Σ_s C_t[s] h_t[s]
                    grads.cm[row * state + s] = grads.cm[row * state + s] + g * h_t[i];
                    let ghs = gh[i] + g * c_t[s];
                    let decay = decay_t[i];
                    // h_t = decay·h_{t−1} + Δ·B·u
                    let g_decay = ghs * h_prev[i] * decay;
                    ddt = ddt + g_decay * a[i] + ghs * b_t[s] * u_te;
                    grads.a[i] = grads.a[i] + g_decay * dt;
                    grads.bm[row * state + s] = grads.bm[row * state + s] + ghs * dt * u_te;
                    du = du + ghs * dt * b_t[s];
                    gh[i] = ghs * decay;
                }
                grads.u[ie] = grads.u[ie] + du;
                grads.delta[ie] = grads.delta[ie] + ddt;
            }
        }
    }
}
