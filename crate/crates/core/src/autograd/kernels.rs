//! Forward kernels and their adjoints on raw row-major buffers.
//!
//! Both the recording tape and the inference path call into these, which is
//! what makes a no-grad forward bit-identical to a recorded one.

use crate::scalar::Scalar;

/// `[m,k]·[k,n]`.
pub fn matmul<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); m * n];
    T::gemm(
        m,
        k,
        n,
        T::one(),
        a,
        k as isize,
        1,
        b,
        n as isize,
        1,
        T::zero(),
        &mut c,
        n as isize,
        1,
    );
    c
}

/// `out += a·bᵀ` where `a` is `[m,k]` and `b` is `[n,k]`.
pub fn matmul_nt_acc<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    T::gemm(
        m,
        k,
        n,
        T::one(),
        a,
        k as isize,
        1,
        b,
        1,
        k as isize,
        T::one(),
        out,
        n as isize,
        1,
    );
}

/// `out += aᵀ·b` where `a` is `[k,m]` and `b` is `[k,n]`.
pub fn matmul_tn_acc<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    T::gemm(
        m,
        k,
        n,
        T::one(),
        a,
        1,
        m as isize,
        b,
        n as isize,
        1,
        T::one(),
        out,
        n as isize,
        1,
    );
}

/// `out += a·b` where `a` is `[m,k]` and `b` is `[k,n]`.
pub fn matmul_nn_acc<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    T::gemm(
        m,
        k,
        n,
        T::one(),
        a,
        k as isize,
        1,
        b,
        n as isize,
        1,
        T::one(),
        out,
        n as isize,
        1,
    );
}

/// `y = x·wᵀ + bias` with `x: [rows,in]`, `w: [out,in]` (the stored
/// `[output, input]` orientation).
pub fn linear<T: Scalar>(x: &[T], w: &[T], bias: Option<&[T]>, rows: usize, d_in: usize, d_out: usize) -> Vec<T> {
    let mut y = match bias {
        Some(b) => {
            let mut y = Vec::with_capacity(rows * d_out);
            for _ in 0..rows {
                y.extend_from_slice(b);
            }
            y
        }
        None => vec![T::zero(); rows * d_out],
    };
    matmul_nt_acc(x, w, &mut y, rows, d_in, d_out);
    y
}

pub struct LayerNormOut<T> {
    pub y: Vec<T>,
    pub mean: Vec<T>,
    pub rstd: Vec<T>,
}

/// Row-wise normalization with population variance, then affine.
pub fn layer_norm<T: Scalar>(x: &[T], gain: &[T], bias: &[T], d: usize, eps: T) -> LayerNormOut<T> {
    let rows = x.len() / d;
    let dn = T::of(d as f64);
    let mut y = vec![T::zero(); x.len()];
    let mut mean = Vec::with_capacity(rows);
    let mut rstd = Vec::with_capacity(rows);
    for (row, out) in x.chunks_exact(d).zip(y.chunks_exact_mut(d)) {
        let mu = row.iter().copied().sum::<T>() / dn;
        let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() / dn;
        let r = T::one() / (var + eps).sqrt();
        for i in 0..d {
            out[i] = (row[i] - mu) * r * gain[i] + bias[i];
        }
        mean.push(mu);
        rstd.push(r);
    }
    LayerNormOut { y, mean, rstd }
}

/// Adjoint of [`layer_norm`]; accumulates into the three gradient buffers.
#[allow(clippy::too_many_arguments)]
pub fn layer_norm_backward<T: Scalar>(
    x: &[T],
    gain: &[T],
    mean: &[T],
    rstd: &[T],
    dy: &[T],
    d: usize,
    dx: Option<&mut [T]>,
    dgain: Option<&mut [T]>,
    dbias: Option<&mut [T]>,
) {
    let dn = T::of(d as f64);
    if let Some(dg) = dgain {
        for (r, (row, g)) in x.chunks_exact(d).zip(dy.chunks_exact(d)).enumerate() {
            for i in 0..d {
                dg[i] = dg[i] + g[i] * (row[i] - mean[r]) * rstd[r];
            }
        }
    }
    if let Some(db) = dbias {
        for g in dy.chunks_exact(d) {
            for i in 0..d {
                db[i] = db[i] + g[i];
            }
        }
    }
    if let Some(dx) = dx {
        let mut xhat = vec![T::zero(); d];
        let mut gx = vec![T::zero(); d];
        for (r, ((row, g), out)) in x
            .chunks_exact(d)
            .zip(dy.chunks_exact(d))
            .zip(dx.chunks_exact_mut(d))
            .enumerate()
        {
            for i in 0..d {
                xhat[i] = (row[i] - mean[r]) * rstd[r];
                gx[i] = g[i] * gain[i];
            }
            let mean_g = gx.iter().copied().sum::<T>() / dn;
            let mean_gx = gx.iter().zip(&xhat).map(|(&a, &b)| a * b).sum::<T>() / dn;
            for i in 0..d {
                out[i] = out[i] + rstd[r] * (gx[i] - mean_g - xhat[i] * mean_gx);
            }
        }
    }
}

const GELU_C: f64 = 0.044715;

fn sqrt_2_over_pi<T: Scalar>() -> T {
    T::of((2.0 / std::f64::consts::PI).sqrt())
}

/// Tanh-approximated GELU.
pub fn gelu<T: Scalar>(x: T) -> T {
    let half = T::of(0.5);
    let inner = sqrt_2_over_pi::<T>() * (x + T::of(GELU_C) * x * x * x);
    half * x * (T::one() + inner.tanh())
}

pub fn gelu_grad<T: Scalar>(x: T) -> T {
    let half = T::of(0.5);
    let c = sqrt_2_over_pi::<T>();
    let inner = c * (x + T::of(GELU_C) * x * x * x);
    let t = inner.tanh();
    let dinner = c * (T::one() + T::of(3.0 * GELU_C) * x * x);
    half * (T::one() + t) + half * x * (T::one() - t * t) * dinner
}

/// Geometry of a `[batch, heads, len, head_dim]` attention problem.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttnDims {
    pub batch: usize,
    pub heads: usize,
    pub len: usize,
    pub head_dim: usize,
}

impl AttnDims {
    fn plane(&self) -> usize {
        self.len * self.head_dim
    }
}

/// Keys visible to query `i` of batch row `b`: causal and not padded.
/// Returns `None` when every such key is padded, in which case the query
/// attends only to itself.
fn visible(pad: &[bool], b: usize, len: usize, i: usize) -> Option<impl Iterator<Item = usize> + '_> {
    let row = &pad[b * len..(b + 1) * len];
    if row[..=i].iter().all(|&p| p) {
        None
    } else {
        Some((0..=i).filter(move |&j| !row[j]))
    }
}

/// Causal scaled dot-product attention with key padding. Returns the output
/// and the `[B,h,L,L]` weight matrix (zero outside the visible set).
pub fn attention<T: Scalar>(q: &[T], k: &[T], v: &[T], pad: &[bool], dims: AttnDims) -> (Vec<T>, Vec<T>) {
    let AttnDims {
        batch,
        heads,
        len,
        head_dim,
    } = dims;
    let scale = T::one() / T::of(head_dim as f64).sqrt();
    let mut out = vec![T::zero(); q.len()];
    let mut probs = vec![T::zero(); batch * heads * len * len];
    let mut logits = vec![T::zero(); len];
    for b in 0..batch {
        for h in 0..heads {
            let base = (b * heads + h) * dims.plane();
            let pbase = (b * heads + h) * len * len;
            for i in 0..len {
                let qi = &q[base + i * head_dim..base + (i + 1) * head_dim];
                let prow = &mut probs[pbase + i * len..pbase + (i + 1) * len];
                match visible(pad, b, len, i) {
                    None => prow[i] = T::one(),
                    Some(keys) => {
                        let keys: Vec<usize> = keys.collect();
                        let mut max = T::neg_infinity();
                        for &j in &keys {
                            let kj = &k[base + j * head_dim..base + (j + 1) * head_dim];
                            let s = qi.iter().zip(kj).map(|(&a, &c)| a * c).sum::<T>() * scale;
                            logits[j] = s;
                            max = max.max(s);
                        }
                        let mut z = T::zero();
                        for &j in &keys {
                            let e = (logits[j] - max).exp();
                            prow[j] = e;
                            z = z + e;
                        }
                        for &j in &keys {
                            prow[j] = prow[j] / z;
                        }
                    }
                }
                let oi = &mut out[base + i * head_dim..base + (i + 1) * head_dim];
                for j in 0..=i {
                    let p = prow[j];
                    if p == T::zero() {
                        continue;
                    }
                    let vj = &v[base + j * head_dim..base + (j + 1) * head_dim];
                    for (o, &vv) in oi.iter_mut().zip(vj) {
                        *o = *o + p * vv;
                    }
                }
            }
        }
    }
    (out, probs)
}

/// Adjoint of [`attention`]. Gradient buffers are accumulated into.
#[allow(clippy::too_many_arguments)]
pub fn attention_backward<T: Scalar>(
    q: &[T],
    k: &[T],
    v: &[T],
    probs: &[T],
    dout: &[T],
    dims: AttnDims,
    mut dq: Option<&mut [T]>,
    mut dk: Option<&mut [T]>,
    mut dv: Option<&mut [T]>,
) {
    let AttnDims {
        batch,
        heads,
        len,
        head_dim,
    } = dims;
    let scale = T::one() / T::of(head_dim as f64).sqrt();
    let mut dp = vec![T::zero(); len];
    for b in 0..batch {
        for h in 0..heads {
            let base = (b * heads + h) * dims.plane();
            let pbase = (b * heads + h) * len * len;
            for i in 0..len {
                let prow = &probs[pbase + i * len..pbase + (i + 1) * len];
                let doi = &dout[base + i * head_dim..base + (i + 1) * head_dim];
                let mut dot = T::zero();
                for j in 0..=i {
                    let vj = &v[base + j * head_dim..base + (j + 1) * head_dim];
                    dp[j] = doi.iter().zip(vj).map(|(&a, &c)| a * c).sum::<T>();
                    dot = dot + prow[j] * dp[j];
                    if let Some(dv) = dv.as_deref_mut() {
                        if prow[j] != T::zero() {
                            let dvj = &mut dv[base + j * head_dim..base + (j + 1) * head_dim];
                            for (g, &o) in dvj.iter_mut().zip(doi) {
                                *g = *g + prow[j] * o;
                            }
                        }
                    }
                }
                for j in 0..=i {
                    let ds = prow[j] * (dp[j] - dot) * scale;
                    if ds == T::zero() {
                        continue;
                    }
                    if let Some(dq) = dq.as_deref_mut() {
                        let kj = &k[base + j * head_dim..base + (j + 1) * head_dim];
                        let dqi = &mut dq[base + i * head_dim..base + (i + 1) * head_dim];
                        for (g, &kk) in dqi.iter_mut().zip(kj) {
                            *g = *g + ds * kk;
                        }
                    }
                    if let Some(dk) = dk.as_deref_mut() {
                        let qi = &q[base + i * head_dim..base + (i + 1) * head_dim];
                        let dkj = &mut dk[base + j * head_dim..base + (j + 1) * head_dim];
                        for (g, &qq) in dkj.iter_mut().zip(qi) {
                            *g = *g + ds * qq;
                        }
                    }
                }
            }
        }
    }
}

/// Copies columns `offset..offset + heads·head_dim` of a `[B, L, width]`
/// buffer into head-major `[B, heads, L, head_dim]` order, adding into `dst`.
pub fn split_heads_acc<T: Scalar>(src: &[T], dst: &mut [T], width: usize, offset: usize, dims: AttnDims) {
    let AttnDims {
        batch,
        heads,
        len,
        head_dim,
    } = dims;
    for b in 0..batch {
        for l in 0..len {
            let row = (b * len + l) * width + offset;
            for h in 0..heads {
                let from = &src[row + h * head_dim..row + (h + 1) * head_dim];
                let at = ((b * heads + h) * len + l) * head_dim;
                for (d, &s) in dst[at..at + head_dim].iter_mut().zip(from) {
                    *d = *d + s;
                }
            }
        }
    }
}

/// Inverse of [`split_heads_acc`]: head-major `src` is added into columns
/// `offset..` of the `[B, L, width]` buffer `dst`.
pub fn merge_heads_acc<T: Scalar>(src: &[T], dst: &mut [T], width: usize, offset: usize, dims: AttnDims) {
    let AttnDims {
        batch,
        heads,
        len,
        head_dim,
    } = dims;
    for b in 0..batch {
        for l in 0..len {
            let row = (b * len + l) * width + offset;
            for h in 0..heads {
                let at = ((b * heads + h) * len + l) * head_dim;
                let from = &src[at..at + head_dim];
                for (d, &s) in dst[row + h * head_dim..row + (h + 1) * head_dim].iter_mut().zip(from) {
                    *d = *d + s;
                }
            }
        }
    }
}
