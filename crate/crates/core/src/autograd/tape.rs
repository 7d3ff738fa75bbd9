use std::collections::BTreeMap;

use super::kernels::{self, AttnDims};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::params::Param;
use crate::scalar::Scalar;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Linear {
        x: Var,
        w: Var,
        bias: Option<Var>,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Sum(Var),
    Gelu(Var),
    Tanh(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        mean: Vec<T>,
        rstd: Vec<T>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        probs: Vec<T>,
        dims: AttnDims,
    },
    SplitHeads {
        x: Var,
        width: usize,
        offset: usize,
        dims: AttnDims,
    },
    MergeHeads {
        x: Var,
        dims: AttnDims,
    },
    GatherRows {
        x: Var,
        index: Vec<usize>,
    },
    Concat(Vec<Var>),
    Reshape(Var),
    MaskedMse {
        pred: Var,
        target: Var,
        keep: Vec<bool>,
        count: usize,
    },
}

impl<T> Op<T> {
    fn parents(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Linear { x, w, bias } => {
                let mut p = vec![*x, *w];
                p.extend(bias);
                p
            }
            Op::Scale(a, _)
            | Op::Sum(a)
            | Op::Gelu(a)
            | Op::Tanh(a)
            | Op::Reshape(a)
            | Op::SplitHeads { x: a, .. }
            | Op::MergeHeads { x: a, .. }
            | Op::GatherRows { x: a, .. } => vec![*a],
            Op::LayerNorm { x, gain, bias, .. } => vec![*x, *gain, *bias],
            Op::Attention { q, k, v, .. } => vec![*q, *k, *v],
            Op::Concat(parts) => parts.clone(),
            Op::MaskedMse { pred, target, .. } => vec![*pred, *target],
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    requires_grad: bool,
    op: Op<T>,
}

/// Append-only record of a forward computation.
///
/// Nodes are pushed in evaluation order, so parents always precede their
/// children and a single reverse sweep visits each node once. A tape built
/// with [`Tape::inference`] evaluates through the same kernels but never
/// marks anything as requiring a gradient.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    recording: bool,
    params: Vec<(String, Var)>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            recording: true,
            params: Vec::new(),
        }
    }

    /// A tape that only evaluates.
    pub fn inference() -> Self {
        Self {
            recording: false,
            ..Self::new()
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        debug_assert!(value.is_finite(), "non-finite forward value");
        let requires_grad = self.recording && op.parents().iter().any(|p| self.nodes[p.0].requires_grad);
        let op = if requires_grad { op } else { strip(op) };
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad: requires_grad && self.recording,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    /// Binds a model parameter. Trainable parameters become named gradient
    /// leaves; frozen ones enter as constants.
    pub fn param(&mut self, p: &Param<T>) -> Var {
        let v = self.leaf(p.value.clone(), p.trainable);
        if p.trainable && self.recording {
            self.params.push((p.name.clone(), v));
        }
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = kernels::matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        Ok(self.push(Tensor::new(&[m, n], out)?, Op::MatMul(a, b)))
    }

    /// `x·wᵀ + bias` over the last axis of `x`; `w` is `[out, in]`.
    pub fn linear(&mut self, x: Var, w: Var, bias: Option<Var>) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        let d_in = *sx.last().unwrap_or(&0);
        if sw.len() != 2 || sw[1] != d_in {
            return Err(Error::shape("linear", &sx, &sw));
        }
        let d_out = sw[0];
        if let Some(b) = bias {
            if self.shape(b) != [d_out] {
                return Err(Error::shape("linear bias", &sw, self.shape(b)));
            }
        }
        let rows = self.value(x).rows();
        let out = kernels::linear(
            self.value(x).data(),
            self.value(w).data(),
            bias.map(|b| self.value(b).data()),
            rows,
            d_in,
            d_out,
        );
        let mut shape = sx;
        *shape.last_mut().expect("rank >= 1") = d_out;
        Ok(self.push(Tensor::new(&shape, out)?, Op::Linear { x, w, bias }))
    }

    fn zip_same(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape(op, ta.shape(), tb.shape()));
        }
        let out = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape(), out)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same("add", a, b, |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same("sub", a, b, |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same("mul", a, b, |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let ta = self.value(a);
        let out = ta.data().iter().map(|&x| x * s).collect();
        let t = Tensor::new(ta.shape(), out).expect("same shape");
        self.push(t, Op::Scale(a, s))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().sum::<T>();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    fn map(&mut self, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let ta = self.value(a);
        let out = ta.data().iter().map(|&x| f(x)).collect();
        let t = Tensor::new(ta.shape(), out).expect("same shape");
        self.push(t, op)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        self.map(a, kernels::gelu, Op::Gelu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, |x| x.tanh(), Op::Tanh(a))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).reshape(shape)?;
        Ok(self.push(t, Op::Reshape(a)))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: T) -> Result<Var> {
        let tx = self.value(x);
        let d = tx.last_dim();
        if tx.shape().is_empty() || d == 0 {
            return Err(Error::EmptyAxis("layer_norm"));
        }
        if self.shape(gain) != [d] || self.shape(bias) != [d] {
            return Err(Error::shape("layer_norm", tx.shape(), self.shape(gain)));
        }
        let out = kernels::layer_norm(tx.data(), self.value(gain).data(), self.value(bias).data(), d, eps);
        let t = Tensor::new(tx.shape(), out.y)?;
        Ok(self.push(
            t,
            Op::LayerNorm {
                x,
                gain,
                bias,
                mean: out.mean,
                rstd: out.rstd,
            },
        ))
    }

    /// Causal scaled dot-product attention over `[B, h, L, dk]` inputs.
    /// `pad_mask` is `[B, L]`, true on padded token slots.
    pub fn causal_attention(&mut self, q: Var, k: Var, v: Var, pad_mask: &[bool]) -> Result<Var> {
        let sq = self.shape(q).to_vec();
        if sq.len() != 4 || self.shape(k) != sq.as_slice() || self.shape(v) != sq.as_slice() {
            return Err(Error::shape("causal_attention", &sq, self.shape(k)));
        }
        let dims = AttnDims {
            batch: sq[0],
            heads: sq[1],
            len: sq[2],
            head_dim: sq[3],
        };
        if pad_mask.len() != dims.batch * dims.len {
            return Err(Error::shape("causal_attention mask", &sq, &[pad_mask.len()]));
        }
        let (out, probs) = kernels::attention(
            self.value(q).data(),
            self.value(k).data(),
            self.value(v).data(),
            pad_mask,
            dims,
        );
        let t = Tensor::new(&sq, out)?;
        Ok(self.push(t, Op::Attention { q, k, v, probs, dims }))
    }

    /// Splits a fused `[B, L, 3·d]` projection into head-major `q`, `k`, `v`.
    pub fn split_qkv(&mut self, qkv: Var, heads: usize) -> Result<[Var; 3]> {
        let s = self.shape(qkv).to_vec();
        if s.len() != 3 || !s[2].is_multiple_of(3) || !(s[2] / 3).is_multiple_of(heads) {
            return Err(Error::shape("split_qkv", &s, &[heads]));
        }
        let d = s[2] / 3;
        let dims = AttnDims {
            batch: s[0],
            heads,
            len: s[1],
            head_dim: d / heads,
        };
        let mut out = [Var(0); 3];
        for (part, slot) in out.iter_mut().enumerate() {
            let mut buf = vec![T::zero(); s[0] * s[1] * d];
            kernels::split_heads_acc(self.value(qkv).data(), &mut buf, s[2], part * d, dims);
            let t = Tensor::new(&[s[0], heads, s[1], d / heads], buf)?;
            *slot = self.push(
                t,
                Op::SplitHeads {
                    x: qkv,
                    width: s[2],
                    offset: part * d,
                    dims,
                },
            );
        }
        Ok(out)
    }

    /// `[B, h, L, dk]` → `[B, L, h·dk]`.
    pub fn merge_heads(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 {
            return Err(Error::shape("merge_heads", &s, &[4]));
        }
        let dims = AttnDims {
            batch: s[0],
            heads: s[1],
            len: s[2],
            head_dim: s[3],
        };
        let d = s[1] * s[3];
        let mut buf = vec![T::zero(); s[0] * s[2] * d];
        kernels::merge_heads_acc(self.value(x).data(), &mut buf, d, 0, dims);
        let t = Tensor::new(&[s[0], s[2], d], buf)?;
        Ok(self.push(t, Op::MergeHeads { x, dims }))
    }

    /// Selects rows of `x` viewed as `[rows, last_dim]`; result is
    /// `[index.len(), last_dim]`.
    pub fn gather_rows(&mut self, x: Var, index: Vec<usize>) -> Result<Var> {
        let tx = self.value(x);
        let (rows, d) = (tx.rows(), tx.last_dim());
        let mut out = Vec::with_capacity(index.len() * d);
        for &i in &index {
            if i >= rows {
                return Err(Error::Range(format!("gather row {i} of {rows}")));
            }
            out.extend_from_slice(&tx.data()[i * d..(i + 1) * d]);
        }
        let t = Tensor::new(&[index.len(), d], out)?;
        Ok(self.push(t, Op::GatherRows { x, index }))
    }

    /// Stacks row views `[r_i, d]` into `[Σ r_i, d]`.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let d = self.value(parts[0]).last_dim();
        let mut out = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.last_dim() != d {
                return Err(Error::shape("concat_rows", self.shape(parts[0]), t.shape()));
            }
            rows += t.rows();
            out.extend_from_slice(t.data());
        }
        let t = Tensor::new(&[rows, d], out)?;
        Ok(self.push(t, Op::Concat(parts.to_vec())))
    }

    /// Mean squared error over the cells where `keep` is true. `keep` has
    /// one entry per leading row of `pred` viewed as `[rows, last_dim]`, and
    /// the mean runs over kept rows times the last dimension.
    pub fn masked_mse(&mut self, pred: Var, target: Var, keep: &[bool]) -> Result<Var> {
        let (tp, tt) = (self.value(pred), self.value(target));
        if tp.shape() != tt.shape() {
            return Err(Error::shape("masked_mse", tp.shape(), tt.shape()));
        }
        let d = tp.last_dim();
        if keep.len() != tp.rows() {
            return Err(Error::shape("masked_mse mask", tp.shape(), &[keep.len()]));
        }
        let kept = keep.iter().filter(|&&k| k).count();
        if kept == 0 {
            return Err(Error::Contract("action loss over an all-padded batch".into()));
        }
        let count = kept * d;
        let mut acc = T::zero();
        for (r, &k) in keep.iter().enumerate() {
            if k {
                for i in r * d..(r + 1) * d {
                    let e = tp.data()[i] - tt.data()[i];
                    acc = acc + e * e;
                }
            }
        }
        let loss = acc / T::of(count as f64);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::MaskedMse {
                pred,
                target,
                keep: keep.to_vec(),
                count,
            },
        ))
    }

    /// Reverse sweep from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if !self.recording {
            return Err(Error::Contract("backward on an inference tape".into()));
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backprop(&node.op, &node.value, &g, &mut grads);
        }
        let mut out = BTreeMap::new();
        for (i, slot) in grads.into_iter().enumerate() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) && node.requires_grad {
                let g = slot.unwrap_or_else(|| vec![T::zero(); node.value.numel()]);
                out.insert(Var(i), Tensor::new(node.value.shape(), g)?);
            }
        }
        Ok(Gradients {
            leaves: out,
            params: self.params.clone(),
        })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backprop(&self, op: &Op<T>, value: &Tensor<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let val = |v: Var| self.nodes[v.0].value.data();
        let numel = |v: Var| self.nodes[v.0].value.numel();
        // Lazily zeroed accumulation slot for a parent.
        macro_rules! slot {
            ($v:expr) => {
                grads[$v.0].get_or_insert_with(|| vec![T::zero(); numel($v)])
            };
        }
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if self.wants(*a) {
                    kernels::matmul_nt_acc(g, val(*b), slot!(*a), m, n, k);
                }
                if self.wants(*b) {
                    kernels::matmul_tn_acc(val(*a), g, slot!(*b), k, m, n);
                }
            }
            Op::Linear { x, w, bias } => {
                let sw = self.shape(*w);
                let (d_out, d_in) = (sw[0], sw[1]);
                let rows = self.value(*x).rows();
                if self.wants(*x) {
                    kernels::matmul_nn_acc(g, val(*w), slot!(*x), rows, d_out, d_in);
                }
                if self.wants(*w) {
                    kernels::matmul_tn_acc(g, val(*x), slot!(*w), d_out, rows, d_in);
                }
                if let Some(b) = bias {
                    if self.wants(*b) {
                        let db = slot!(*b);
                        for row in g.chunks_exact(d_out) {
                            for (acc, &v) in db.iter_mut().zip(row) {
                                *acc = *acc + v;
                            }
                        }
                    }
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(op, Op::Sub(..)) { -T::one() } else { T::one() };
                if self.wants(*a) {
                    for (acc, &v) in slot!(*a).iter_mut().zip(g) {
                        *acc = *acc + v;
                    }
                }
                if self.wants(*b) {
                    for (acc, &v) in slot!(*b).iter_mut().zip(g) {
                        *acc = *acc + sign * v;
                    }
                }
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    let vb = val(*b);
                    for ((acc, &v), &y) in slot!(*a).iter_mut().zip(g).zip(vb) {
                        *acc = *acc + v * y;
                    }
                }
                if self.wants(*b) {
                    let va = val(*a);
                    for ((acc, &v), &x) in slot!(*b).iter_mut().zip(g).zip(va) {
                        *acc = *acc + v * x;
                    }
                }
            }
            Op::Scale(a, s) => {
                for (acc, &v) in slot!(*a).iter_mut().zip(g) {
                    *acc = *acc + v * *s;
                }
            }
            Op::Sum(a) => {
                for acc in slot!(*a).iter_mut() {
                    *acc = *acc + g[0];
                }
            }
            Op::Gelu(a) => {
                let va = val(*a);
                for ((acc, &v), &x) in slot!(*a).iter_mut().zip(g).zip(va) {
                    *acc = *acc + v * kernels::gelu_grad(x);
                }
            }
            Op::Tanh(a) => {
                let y = value.data();
                for ((acc, &v), &t) in slot!(*a).iter_mut().zip(g).zip(y) {
                    *acc = *acc + v * (T::one() - t * t);
                }
            }
            Op::Reshape(a) => {
                for (acc, &v) in slot!(*a).iter_mut().zip(g) {
                    *acc = *acc + v;
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                mean,
                rstd,
            } => {
                let d = value.last_dim();
                // Parents are distinct leaves or nodes; take their slots out
                // to satisfy the borrow checker, then put them back.
                let mut dx = self
                    .wants(*x)
                    .then(|| grads[x.0].take().unwrap_or_else(|| vec![T::zero(); numel(*x)]));
                let mut dg = self
                    .wants(*gain)
                    .then(|| grads[gain.0].take().unwrap_or_else(|| vec![T::zero(); numel(*gain)]));
                let mut db = self
                    .wants(*bias)
                    .then(|| grads[bias.0].take().unwrap_or_else(|| vec![T::zero(); numel(*bias)]));
                kernels::layer_norm_backward(
                    val(*x),
                    val(*gain),
                    mean,
                    rstd,
                    g,
                    d,
                    dx.as_deref_mut(),
                    dg.as_deref_mut(),
                    db.as_deref_mut(),
                );
                if let Some(v) = dx {
                    grads[x.0] = Some(v);
                }
                if let Some(v) = dg {
                    grads[gain.0] = Some(v);
                }
                if let Some(v) = db {
                    grads[bias.0] = Some(v);
                }
            }
            Op::Attention { q, k, v, probs, dims } => {
                let take = |grads: &mut [Option<Vec<T>>], p: Var| {
                    self.wants(p)
                        .then(|| grads[p.0].take().unwrap_or_else(|| vec![T::zero(); numel(p)]))
                };
                let mut dq = take(grads, *q);
                let mut dk = take(grads, *k);
                let mut dv = take(grads, *v);
                kernels::attention_backward(
                    val(*q),
                    val(*k),
                    val(*v),
                    probs,
                    g,
                    *dims,
                    dq.as_deref_mut(),
                    dk.as_deref_mut(),
                    dv.as_deref_mut(),
                );
                for (p, buf) in [(*q, dq), (*k, dk), (*v, dv)] {
                    if let Some(b) = buf {
                        grads[p.0] = Some(b);
                    }
                }
            }
            Op::SplitHeads { x, width, offset, dims } => {
                kernels::merge_heads_acc(g, slot!(*x), *width, *offset, *dims);
            }
            Op::MergeHeads { x, dims } => {
                let d = dims.heads * dims.head_dim;
                kernels::split_heads_acc(g, slot!(*x), d, 0, *dims);
            }
            Op::GatherRows { x, index } => {
                let d = value.last_dim();
                let dx = slot!(*x);
                for (r, &i) in index.iter().enumerate() {
                    for c in 0..d {
                        dx[i * d + c] = dx[i * d + c] + g[r * d + c];
                    }
                }
            }
            Op::Concat(parts) => {
                let mut at = 0;
                for p in parts {
                    let n = numel(*p);
                    if self.wants(*p) {
                        for (acc, &v) in slot!(*p).iter_mut().zip(&g[at..at + n]) {
                            *acc = *acc + v;
                        }
                    }
                    at += n;
                }
            }
            Op::MaskedMse {
                pred,
                target,
                keep,
                count,
            } => {
                let d = self.value(*pred).last_dim();
                let c = T::of(2.0) * g[0] / T::of(*count as f64);
                let (vp, vt) = (val(*pred), val(*target));
                let mut resid = vec![T::zero(); vp.len()];
                for (r, &k) in keep.iter().enumerate() {
                    if k {
                        for i in r * d..(r + 1) * d {
                            resid[i] = c * (vp[i] - vt[i]);
                        }
                    }
                }
                if self.wants(*pred) {
                    for (acc, &v) in slot!(*pred).iter_mut().zip(&resid) {
                        *acc = *acc + v;
                    }
                }
                if self.wants(*target) {
                    for (acc, &v) in slot!(*target).iter_mut().zip(&resid) {
                        *acc = *acc - v;
                    }
                }
            }
        }
    }
}

/// Drops saved activations from ops that will never be differentiated.
fn strip<T>(op: Op<T>) -> Op<T> {
    match op {
        Op::LayerNorm { x, gain, bias, .. } => Op::LayerNorm {
            x,
            gain,
            bias,
            mean: Vec::new(),
            rstd: Vec::new(),
        },
        Op::Attention { q, k, v, dims, .. } => Op::Attention {
            q,
            k,
            v,
            probs: Vec::new(),
            dims,
        },
        other => other,
    }
}

/// Gradients of every differentiable leaf of a tape.
pub struct Gradients<T> {
    leaves: BTreeMap<Var, Tensor<T>>,
    params: Vec<(String, Var)>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.leaves.get(&v)
    }

    /// Gradients keyed by parameter name. A parameter bound more than once
    /// has its gradients summed.
    pub fn by_name(&self) -> BTreeMap<String, Tensor<T>> {
        let mut out: BTreeMap<String, Tensor<T>> = BTreeMap::new();
        for (name, v) in &self.params {
            let g = &self.leaves[v];
            match out.get_mut(name) {
                Some(acc) => {
                    for (a, &b) in acc.data_mut().iter_mut().zip(g.data()) {
                        *a = *a + b;
                    }
                }
                None => {
                    out.insert(name.clone(), g.clone());
                }
            }
        }
        out
    }
}
