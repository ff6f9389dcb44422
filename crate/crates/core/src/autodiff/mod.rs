//! Define-by-run reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operation of one forward pass as a node holding
//! its value and the rule needed to push gradients back to its inputs.
//! Nodes are appended in execution order, so the tape is topologically
//! sorted by construction and [`Tape::backward`] is a single reverse sweep.
//!
//! Parameters enter the tape as borrowed leaves, which lets several tapes
//! share one read-only parameter set.

mod backward;
pub mod kernels;

use std::borrow::Cow;

use crate::error::{Error, Result};
use crate::tensor::{check_shape, Scalar, Tensor};

pub use kernels::ScanDims;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unary {
    Sigmoid,
    Tanh,
    Silu,
    Gelu,
    Relu,
    Exp,
    Softplus,
    Neg,
}

impl Unary {
    fn name(self) -> &'static str {
        match self {
            Unary::Sigmoid => "sigmoid",
            Unary::Tanh => "tanh",
            Unary::Silu => "silu",
            Unary::Gelu => "gelu",
            Unary::Relu => "relu",
            Unary::Exp => "exp",
            Unary::Softplus => "softplus",
            Unary::Neg => "neg",
        }
    }

    fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Unary::Sigmoid => kernels::sigmoid(x),
            Unary::Tanh => x.tanh(),
            Unary::Silu => x * kernels::sigmoid(x),
            Unary::Gelu => kernels::gelu(x),
            Unary::Relu => x.max(T::zero()),
            Unary::Exp => x.exp(),
            Unary::Softplus => kernels::softplus(x),
            Unary::Neg => -x,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Binary {
    Add,
    Sub,
    Mul,
}

#[derive(Debug)]
pub(crate) enum Op<T> {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
        b_batched: bool,
    },
    Transpose {
        x: Var,
        rows: usize,
        cols: usize,
    },
    Binary {
        kind: Binary,
        a: Var,
        b: Var,
    },
    Unary {
        kind: Unary,
        x: Var,
    },
    Affine {
        x: Var,
        scale: T,
    },
    Sum {
        x: Var,
    },
    Mean {
        x: Var,
    },
    Reshape {
        x: Var,
    },
    Narrow {
        x: Var,
        outer: usize,
        axis_len: usize,
        inner: usize,
        start: usize,
        len: usize,
    },
    Conv1d {
        x: Var,
        kernel: Var,
        bias: Var,
        dims: (usize, usize, usize, usize),
        left_pad: usize,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        dim: usize,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    SoftmaxXent {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<T>,
    },
    Embedding {
        table: Var,
        ids: Vec<usize>,
        dim: usize,
        padding: Option<usize>,
    },
    PermuteTime {
        x: Var,
        src: Vec<usize>,
        len: usize,
        dim: usize,
    },
    StackTime {
        xs: Vec<Var>,
        batch: usize,
        dim: usize,
    },
    Scan {
        u: Var,
        delta: Var,
        a: Var,
        b: Var,
        c: Var,
        d: Var,
        dims: ScanDims,
    },
}

pub(crate) struct Node<'p, T: Scalar> {
    shape: Vec<usize>,
    value: Cow<'p, [T]>,
    op: Op<T>,
    requires_grad: bool,
}

/// Recording of one forward pass.
pub struct Tape<'p, T: Scalar> {
    nodes: Vec<Node<'p, T>>,
    leaf_grads: Vec<Option<Vec<T>>>,
    grad_enabled: bool,
}

impl<T: Scalar> Default for Tape<'_, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p, T: Scalar> Tape<'p, T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            leaf_grads: Vec::new(),
            grad_enabled: true,
        }
    }

    /// A tape that never tracks gradients (inference, benchmarking).
    pub fn inference() -> Self {
        Tape {
            grad_enabled: false,
            ..Self::new()
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn tensor(&self, v: Var) -> Tensor<T> {
        let n = &self.nodes[v.0];
        Tensor::new(n.shape.clone(), n.value.to_vec()).expect("node shapes are validated")
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf after [`Tape::backward`].
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.leaf_grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn zero_grad(&mut self) {
        self.leaf_grads.iter_mut().for_each(|g| *g = None);
    }

    fn push(
        &mut self,
        op_name: &'static str,
        shape: Vec<usize>,
        value: Vec<T>,
        op: Op<T>,
        inputs: &[Var],
    ) -> Result<Var> {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        if value.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                op: op_name,
                step: None,
            });
        }
        let requires_grad =
            self.grad_enabled && inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            shape,
            value: Cow::Owned(value),
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn push_leaf(&mut self, shape: Vec<usize>, value: Cow<'p, [T]>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            shape,
            value,
            op: Op::Leaf,
            requires_grad: requires_grad && self.grad_enabled,
        });
        Var(self.nodes.len() - 1)
    }

    /// Owned leaf, optionally differentiable.
    pub fn leaf(&mut self, t: Tensor<T>, requires_grad: bool) -> Var {
        let (shape, data) = t.into_parts();
        self.push_leaf(shape, Cow::Owned(data), requires_grad)
    }

    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.leaf(t, false)
    }

    /// Borrowed differentiable leaf; the usual way parameters enter a pass.
    pub fn param(&mut self, t: &'p Tensor<T>) -> Var {
        self.push_leaf(t.shape().to_vec(), Cow::Borrowed(t.data()), true)
    }

    pub fn zeros(&mut self, shape: Vec<usize>) -> Var {
        self.constant(Tensor::zeros(shape))
    }

    // ---- linear algebra ----

    /// `a[..×m×k] · b[k×n]` or `a[..×m×k] · b[..×k×n]` with equal leading dims.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sa.len() < 2 || sb.len() < 2 {
            return Err(Error::dim("matmul", format!("{sa:?} x {sb:?}: need rank >= 2")));
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (kb, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        if k != kb {
            return Err(Error::dim("matmul", format!("{sa:?} x {sb:?}: inner dims differ")));
        }
        let lead = &sa[..sa.len() - 2];
        let batch: usize = lead.iter().product();
        let b_batched = sb.len() > 2;
        if b_batched && sb[..sb.len() - 2] != *lead {
            return Err(Error::dim("matmul", format!("{sa:?} x {sb:?}: batch dims differ")));
        }
        let mut out = vec![T::zero(); batch * m * n];
        {
            let (av, bv) = (self.value(a), self.value(b));
            if b_batched {
                for i in 0..batch {
                    kernels::gemm_acc(
                        &av[i * m * k..(i + 1) * m * k],
                        &bv[i * k * n..(i + 1) * k * n],
                        &mut out[i * m * n..(i + 1) * m * n],
                        m,
                        k,
                        n,
                    );
                }
            } else {
                kernels::gemm_acc(av, bv, &mut out, batch * m, k, n);
            }
        }
        let mut shape = lead.to_vec();
        shape.extend([m, n]);
        let op = Op::MatMul {
            a,
            b,
            batch,
            m,
            k,
            n,
            b_batched,
        };
        self.push("matmul", shape, out, op, &[a, b])
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 {
            return Err(Error::dim("transpose", format!("{s:?}: need rank 2")));
        }
        let (rows, cols) = (s[0], s[1]);
        let xv = self.value(x);
        let mut out = vec![T::zero(); rows * cols];
        for i in 0..rows {
            for j in 0..cols {
                out[j * rows + i] = xv[i * cols + j];
            }
        }
        self.push("transpose", vec![cols, rows], out, Op::Transpose { x, rows, cols }, &[x])
    }

    // ---- pointwise ----

    /// Broadcasting: one operand's shape must be a suffix of the other's, or
    /// hold a single element.
    pub fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let (na, nb) = (self.value(a).len(), self.value(b).len());
        let suffix = |big: &[usize], small: &[usize]| {
            small.len() <= big.len() && big[big.len() - small.len()..] == *small
        };
        let shape = if na >= nb && (suffix(sa, sb) || nb == 1) {
            sa.to_vec()
        } else if nb > na && (suffix(sb, sa) || na == 1) {
            sb.to_vec()
        } else {
            return Err(Error::dim("binary", format!("cannot broadcast {sa:?} with {sb:?}")));
        };
        let n = na.max(nb);
        let (av, bv) = (self.value(a), self.value(b));
        let out: Vec<T> = (0..n)
            .map(|i| {
                let (x, y) = (av[i % na], bv[i % nb]);
                match kind {
                    Binary::Add => x + y,
                    Binary::Sub => x - y,
                    Binary::Mul => x * y,
                }
            })
            .collect();
        self.push("binary", shape, out, Op::Binary { kind, a, b }, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    pub fn unary(&mut self, kind: Unary, x: Var) -> Result<Var> {
        let out: Vec<T> = self.value(x).iter().map(|&v| kind.apply(v)).collect();
        let shape = self.shape(x).to_vec();
        self.push(kind.name(), shape, out, Op::Unary { kind, x }, &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Sigmoid, x)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Tanh, x)
    }

    pub fn silu(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Silu, x)
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Gelu, x)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Relu, x)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Exp, x)
    }

    pub fn softplus(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Softplus, x)
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Neg, x)
    }

    /// `scale·x + shift`
    pub fn affine(&mut self, x: Var, scale: T, shift: T) -> Result<Var> {
        let out: Vec<T> = self.value(x).iter().map(|&v| scale * v + shift).collect();
        let shape = self.shape(x).to_vec();
        self.push("affine", shape, out, Op::Affine { x, scale }, &[x])
    }

    // ---- reductions and shape ----

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).iter().copied().sum();
        self.push("sum", vec![1], vec![s], Op::Sum { x }, &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let s = v.iter().copied().sum::<T>() / T::c(v.len() as f64);
        self.push("mean", vec![1], vec![s], Op::Mean { x }, &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        check_shape("reshape", &shape)?;
        if shape.iter().product::<usize>() != self.value(x).len() {
            return Err(Error::dim(
                "reshape",
                format!("{:?} -> {shape:?}", self.shape(x)),
            ));
        }
        let out = self.value(x).to_vec();
        self.push("reshape", shape, out, Op::Reshape { x }, &[x])
    }

    /// Slice `len` entries starting at `start` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() || len == 0 || start + len > s[axis] {
            return Err(Error::dim(
                "narrow",
                format!("{s:?} axis {axis} range {start}..{}", start + len),
            ));
        }
        let outer: usize = s[..axis].iter().product();
        let inner: usize = s[axis + 1..].iter().product();
        let axis_len = s[axis];
        let xv = self.value(x);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * axis_len + start) * inner;
            out.extend_from_slice(&xv[base..base + len * inner]);
        }
        let mut shape = s;
        shape[axis] = len;
        let op = Op::Narrow {
            x,
            outer,
            axis_len,
            inner,
            start,
            len,
        };
        self.push("narrow", shape, out, op, &[x])
    }

    /// Pick one index along `axis`, dropping that axis.
    pub fn select(&mut self, x: Var, axis: usize, index: usize) -> Result<Var> {
        let v = self.narrow(x, axis, index, 1)?;
        let mut shape = self.shape(x).to_vec();
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        // Reuse the narrow node, fixing up its recorded shape.
        self.nodes[v.0].shape = shape;
        Ok(v)
    }

    /// Stack `B×D` tensors into `B×L×D` along a new time axis.
    pub fn stack_time(&mut self, xs: &[Var]) -> Result<Var> {
        let first = *xs
            .first()
            .ok_or_else(|| Error::dim("stack_time", "no inputs"))?;
        let s = self.shape(first).to_vec();
        if s.len() != 2 || xs.iter().any(|&v| self.shape(v) != s.as_slice()) {
            return Err(Error::dim("stack_time", "inputs must share one B×D shape"));
        }
        let (batch, dim, len) = (s[0], s[1], xs.len());
        let mut out = vec![T::zero(); batch * len * dim];
        for (t, &v) in xs.iter().enumerate() {
            let xv = self.value(v);
            for b in 0..batch {
                out[(b * len + t) * dim..(b * len + t + 1) * dim]
                    .copy_from_slice(&xv[b * dim..(b + 1) * dim]);
            }
        }
        let op = Op::StackTime {
            xs: xs.to_vec(),
            batch,
            dim,
        };
        self.push("stack_time", vec![batch, len, dim], out, op, xs)
    }

    /// `out[b, t] = x[b, src[b·L + t]]` for `x[B×L×D]`.
    pub fn permute_time(&mut self, x: Var, src: Vec<usize>) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 || src.len() != s[0] * s[1] {
            return Err(Error::dim("permute_time", format!("{s:?} with {} indices", src.len())));
        }
        let (batch, len, dim) = (s[0], s[1], s[2]);
        if let Some(&bad) = src.iter().find(|&&i| i >= len) {
            return Err(Error::Index {
                op: "permute_time",
                index: bad,
                bound: len,
            });
        }
        let xv = self.value(x);
        let mut out = vec![T::zero(); batch * len * dim];
        for b in 0..batch {
            for t in 0..len {
                let from = (b * len + src[b * len + t]) * dim;
                out[(b * len + t) * dim..(b * len + t + 1) * dim]
                    .copy_from_slice(&xv[from..from + dim]);
            }
        }
        self.push("permute_time", s, out, Op::PermuteTime { x, src, len, dim }, &[x])
    }

    // ---- layers ----

    /// Depthwise 1-D convolution over `x[B×L×D]` with `kernel[k×D]`, `bias[D]`.
    /// Causal mode left-pads by `k−1`; otherwise padding is centred.
    pub fn conv1d_depthwise(&mut self, x: Var, kernel: Var, bias: Var, causal: bool) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let sk = self.shape(kernel).to_vec();
        let sb = self.shape(bias).to_vec();
        if sx.len() != 3 || sk.len() != 2 || sk[1] != sx[2] || sb != [sx[2]] {
            return Err(Error::dim(
                "conv1d_depthwise",
                format!("x {sx:?}, kernel {sk:?}, bias {sb:?}"),
            ));
        }
        let dims = (sx[0], sx[1], sx[2], sk[0]);
        let left_pad = if causal { dims.3 - 1 } else { (dims.3 - 1) / 2 };
        let mut out = vec![T::zero(); sx.iter().product()];
        kernels::conv1d_depthwise(
            self.value(x),
            self.value(kernel),
            self.value(bias),
            &mut out,
            dims,
            left_pad,
        );
        let op = Op::Conv1d {
            x,
            kernel,
            bias,
            dims,
            left_pad,
        };
        self.push("conv1d_depthwise", sx, out, op, &[x, kernel, bias])
    }

    /// Normalise over the last axis, then apply `gain`/`bias`.
    pub fn layernorm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let dim = *s.last().expect("shapes are non-empty");
        if self.shape(gain) != [dim] || self.shape(bias) != [dim] {
            return Err(Error::dim("layernorm", format!("x {s:?} with gain/bias of {dim}")));
        }
        let xv = self.value(x);
        let (g, bb) = (self.value(gain), self.value(bias));
        let rows = xv.len() / dim;
        let mut xhat = vec![T::zero(); xv.len()];
        let mut rstd = vec![T::zero(); rows];
        let mut out = vec![T::zero(); xv.len()];
        let inv_d = T::c(1.0 / dim as f64);
        for r in 0..rows {
            let row = &xv[r * dim..(r + 1) * dim];
            let mu = row.iter().copied().sum::<T>() * inv_d;
            let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() * inv_d;
            let rs = T::one() / (var + T::c(eps)).sqrt();
            rstd[r] = rs;
            for j in 0..dim {
                let h = (row[j] - mu) * rs;
                xhat[r * dim + j] = h;
                out[r * dim + j] = h * g[j] + bb[j];
            }
        }
        let op = Op::LayerNorm {
            x,
            gain,
            bias,
            dim,
            xhat,
            rstd,
        };
        self.push("layernorm", s, out, op, &[x, gain, bias])
    }

    /// Mean negative log-likelihood of `targets` under a row-wise softmax of
    /// `logits[B×K]`, computed with log-sum-exp.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let s = self.shape(logits).to_vec();
        if s.len() != 2 || s[0] != targets.len() {
            return Err(Error::dim(
                "softmax_cross_entropy",
                format!("logits {s:?} with {} targets", targets.len()),
            ));
        }
        let (rows, classes) = (s[0], s[1]);
        if let Some(&bad) = targets.iter().find(|&&t| t >= classes) {
            return Err(Error::Index {
                op: "softmax_cross_entropy",
                index: bad,
                bound: classes,
            });
        }
        let lv = self.value(logits);
        let mut probs = vec![T::zero(); lv.len()];
        let mut loss = T::zero();
        for r in 0..rows {
            let row = &lv[r * classes..(r + 1) * classes];
            let (arg, max) = row
                .iter()
                .copied()
                .enumerate()
                .fold((0, T::neg_infinity()), |best, (i, v)| if v > best.1 { (i, v) } else { best });
            // log Σ exp = max + log1p(Σ_{j≠argmax} exp(v_j − max)), exact near saturation.
            let rest: T = row
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != arg)
                .map(|(_, &v)| (v - max).exp())
                .sum();
            let log_z = rest.ln_1p();
            for (p, &v) in probs[r * classes..(r + 1) * classes].iter_mut().zip(row) {
                *p = ((v - max) - log_z).exp();
            }
            loss = loss + (max - row[targets[r]]) + log_z;
        }
        let loss = loss / T::c(rows as f64);
        let op = Op::SoftmaxXent {
            logits,
            targets: targets.to_vec(),
            probs,
        };
        self.push("softmax_cross_entropy", vec![1], vec![loss], op, &[logits])
    }

    /// Row gather from `table[V×D]`; the result has shape `lead ++ [D]`.
    /// Ids equal to `padding` produce zero rows and receive no gradient.
    pub fn embedding(
        &mut self,
        table: Var,
        ids: &[usize],
        lead: &[usize],
        padding: Option<usize>,
    ) -> Result<Var> {
        let st = self.shape(table).to_vec();
        if st.len() != 2 || lead.iter().product::<usize>() != ids.len() {
            return Err(Error::dim("embedding", format!("table {st:?}, ids {lead:?}")));
        }
        let (vocab, dim) = (st[0], st[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i >= vocab) {
            return Err(Error::Index {
                op: "embedding",
                index: bad,
                bound: vocab,
            });
        }
        let tv = self.value(table);
        let mut out = vec![T::zero(); ids.len() * dim];
        for (r, &id) in ids.iter().enumerate() {
            if Some(id) != padding {
                out[r * dim..(r + 1) * dim].copy_from_slice(&tv[id * dim..(id + 1) * dim]);
            }
        }
        let mut shape = lead.to_vec();
        shape.push(dim);
        let op = Op::Embedding {
            table,
            ids: ids.to_vec(),
            dim,
            padding,
        };
        self.push("embedding", shape, out, op, &[table])
    }

    /// Selective scan over `u, delta[B×L×E]`, `a[E×S]`, `b, c[B×L×S]`, `d[E]`.
    pub fn selective_scan(
        &mut self,
        u: Var,
        delta: Var,
        a: Var,
        b: Var,
        c: Var,
        d: Var,
    ) -> Result<Var> {
        let su = self.shape(u).to_vec();
        let sa = self.shape(a).to_vec();
        if su.len() != 3 || sa.len() != 2 || sa[0] != su[2] {
            return Err(Error::dim("selective_scan", format!("u {su:?}, A {sa:?}")));
        }
        let dims = ScanDims {
            batch: su[0],
            len: su[1],
            inner: su[2],
            state: sa[1],
        };
        let bc_shape = [dims.batch, dims.len, dims.state];
        if self.shape(delta) != su.as_slice()
            || self.shape(b) != bc_shape
            || self.shape(c) != bc_shape
            || self.shape(d) != [dims.inner]
        {
            return Err(Error::dim(
                "selective_scan",
                format!(
                    "delta {:?}, B {:?}, C {:?}, D {:?} against u {su:?}",
                    self.shape(delta),
                    self.shape(b),
                    self.shape(c),
                    self.shape(d)
                ),
            ));
        }
        let mut y = vec![T::zero(); su.iter().product()];
        let bad = kernels::selective_scan(
            self.value(u),
            self.value(delta),
            self.value(a),
            self.value(b),
            self.value(c),
            self.value(d),
            &mut y,
            dims,
        );
        if let Some(step) = bad {
            return Err(Error::NonFinite {
                op: "selective_scan",
                step: Some(step),
            });
        }
        let op = Op::Scan {
            u,
            delta,
            a,
            b,
            c,
            d,
            dims,
        };
        self.push("selective_scan", su, y, op, &[u, delta, a, b, c, d])
    }
}

#[cfg(test)]
mod tests;
