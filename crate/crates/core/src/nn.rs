//! Minimal neural-network layer zoo with explicit forward/backward passes.
//!
//! Layers cache what their backward pass needs and accumulate parameter
//! gradients in place. Everything is generic over [`Scalar`]; the f64
//! instantiation is what the finite-difference oracles check against.
//! All activations on the differentiable path are smooth (SiLU / sigmoid /
//! softmax / layernorm), so central differences converge cleanly.

use crate::rng::Pcg32;
use crate::scalar::{sc, Scalar};
use crate::tensor::{matmul, matmul_acc, matmul_nt, matmul_tn_acc};

#[derive(Debug, Clone)]
pub struct Param<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub w: Vec<T>,
    pub g: Vec<T>,
    /// Whether weight decay applies (matrices yes; biases, norms and
    /// positional tables no).
    pub decay: bool,
}

impl<T: Scalar> Param<T> {
    pub fn zeros(name: impl Into<String>, shape: Vec<usize>, decay: bool) -> Self {
        let len = shape.iter().product();
        Self {
            name: name.into(),
            shape,
            w: vec![T::zero(); len],
            g: vec![T::zero(); len],
            decay,
        }
    }

    pub fn normal(
        name: impl Into<String>,
        shape: Vec<usize>,
        std: f64,
        rng: &mut Pcg32,
        decay: bool,
    ) -> Self {
        let mut p = Self::zeros(name, shape, decay);
        for v in p.w.iter_mut() {
            *v = sc::<T>(std * rng.normal());
        }
        p
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }
}

/// Parameter traversal in a fixed, structure-defined order. The order is the
/// checkpoint tensor order and the optimizer state order.
pub trait Params<T: Scalar> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>));

    fn zero_grad(&mut self) {
        self.visit_mut(&mut |p| p.g.fill(T::zero()));
    }

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |p| n += p.len());
        n
    }
}

pub fn export_params<T: Scalar, M: Params<T> + ?Sized>(m: &M) -> Vec<T> {
    let mut out = Vec::new();
    m.visit(&mut |p| out.extend_from_slice(&p.w));
    out
}

pub fn import_params<T: Scalar, M: Params<T> + ?Sized>(m: &mut M, flat: &[T]) {
    let mut off = 0;
    m.visit_mut(&mut |p| {
        let len = p.len();
        p.w.copy_from_slice(&flat[off..off + len]);
        off += len;
    });
    assert_eq!(off, flat.len(), "flat parameter size mismatch");
}

pub fn export_grads<T: Scalar, M: Params<T> + ?Sized>(m: &M) -> Vec<(String, Vec<T>)> {
    let mut out = Vec::new();
    m.visit(&mut |p| out.push((p.name.clone(), p.g.clone())));
    out
}

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

pub fn silu_forward<T: Scalar>(x: &mut [T]) -> Vec<T> {
    let pre = x.to_vec();
    for v in x.iter_mut() {
        *v = *v * sigmoid(*v);
    }
    pre
}

pub fn silu_backward<T: Scalar>(pre: &[T], dy: &mut [T]) {
    for (d, &x) in dy.iter_mut().zip(pre) {
        let s = sigmoid(x);
        *d = *d * (s * (T::one() + x * (T::one() - s)));
    }
}

pub fn sigmoid_forward<T: Scalar>(x: &mut [T]) {
    for v in x.iter_mut() {
        *v = sigmoid(*v);
    }
}

/// `y` is the sigmoid output.
pub fn sigmoid_backward<T: Scalar>(y: &[T], dy: &mut [T]) {
    for (d, &o) in dy.iter_mut().zip(y) {
        *d = *d * o * (T::one() - o);
    }
}

// ---------------------------------------------------------------------------
// Conv2d, stride 1, square kernel, zero "same" padding, HWC layout
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct Conv2d<T> {
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub weight: Param<T>, // [c_out, k*k*c_in]
    pub bias: Param<T>,   // [c_out]
}

pub struct Conv2dCache<T> {
    cols: Vec<T>,
    h: usize,
    w: usize,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(name: &str, c_in: usize, c_out: usize, k: usize, rng: &mut Pcg32) -> Self {
        let fan_in = (k * k * c_in) as f64;
        Self {
            c_in,
            c_out,
            k,
            weight: Param::normal(
                format!("{name}.weight"),
                vec![c_out, k * k * c_in],
                (2.0 / fan_in).sqrt(),
                rng,
                true,
            ),
            bias: Param::zeros(format!("{name}.bias"), vec![c_out], false),
        }
    }

    /// All-zero weights; used for identity-at-init residual blocks.
    pub fn new_zeroed(name: &str, c_in: usize, c_out: usize, k: usize) -> Self {
        Self {
            c_in,
            c_out,
            k,
            weight: Param::zeros(format!("{name}.weight"), vec![c_out, k * k * c_in], true),
            bias: Param::zeros(format!("{name}.bias"), vec![c_out], false),
        }
    }

    fn im2col(&self, x: &[T], h: usize, w: usize) -> Vec<T> {
        let k = self.k;
        let pad = (k - 1) / 2;
        let kk = k * k * self.c_in;
        let mut cols = vec![T::zero(); h * w * kk];
        for i in 0..h {
            for j in 0..w {
                let base = (i * w + j) * kk;
                for dy in 0..k {
                    let ii = i as isize + dy as isize - pad as isize;
                    if ii < 0 || ii >= h as isize {
                        continue;
                    }
                    for dx in 0..k {
                        let jj = j as isize + dx as isize - pad as isize;
                        if jj < 0 || jj >= w as isize {
                            continue;
                        }
                        let src = (ii as usize * w + jj as usize) * self.c_in;
                        let dst = base + (dy * k + dx) * self.c_in;
                        cols[dst..dst + self.c_in]
                            .copy_from_slice(&x[src..src + self.c_in]);
                    }
                }
            }
        }
        cols
    }

    pub fn forward(&self, x: &[T], h: usize, w: usize) -> (Vec<T>, Conv2dCache<T>) {
        debug_assert_eq!(x.len(), h * w * self.c_in);
        let kk = self.k * self.k * self.c_in;
        let cols = self.im2col(x, h, w);
        let mut y = vec![T::zero(); h * w * self.c_out];
        matmul_nt(&cols, &self.weight.w, h * w, kk, self.c_out, &mut y);
        for pos in 0..h * w {
            for c in 0..self.c_out {
                y[pos * self.c_out + c] += self.bias.w[c];
            }
        }
        (y, Conv2dCache { cols, h, w })
    }

    pub fn backward(&mut self, cache: &Conv2dCache<T>, dy: &[T]) -> Vec<T> {
        let (h, w) = (cache.h, cache.w);
        let kk = self.k * self.k * self.c_in;
        let hw = h * w;
        debug_assert_eq!(dy.len(), hw * self.c_out);

        matmul_tn_acc(dy, &cache.cols, self.c_out, hw, kk, &mut self.weight.g);
        for pos in 0..hw {
            for c in 0..self.c_out {
                self.bias.g[c] += dy[pos * self.c_out + c];
            }
        }

        let mut dcols = vec![T::zero(); hw * kk];
        matmul_acc(dy, &self.weight.w, hw, self.c_out, kk, &mut dcols);

        // col2im scatter-add
        let k = self.k;
        let pad = (k - 1) / 2;
        let mut dx = vec![T::zero(); hw * self.c_in];
        for i in 0..h {
            for j in 0..w {
                let base = (i * w + j) * kk;
                for dyk in 0..k {
                    let ii = i as isize + dyk as isize - pad as isize;
                    if ii < 0 || ii >= h as isize {
                        continue;
                    }
                    for dxk in 0..k {
                        let jj = j as isize + dxk as isize - pad as isize;
                        if jj < 0 || jj >= w as isize {
                            continue;
                        }
                        let dst = (ii as usize * w + jj as usize) * self.c_in;
                        let src = base + (dyk * k + dxk) * self.c_in;
                        for c in 0..self.c_in {
                            dx[dst + c] += dcols[src + c];
                        }
                    }
                }
            }
        }
        dx
    }
}

impl<T: Scalar> Params<T> for Conv2d<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        f(&self.weight);
        f(&self.bias);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}

// ---------------------------------------------------------------------------
// 2x2 stride-2 transposed convolution (exact 2x upsampling)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct ConvTranspose2x2<T> {
    pub c_in: usize,
    pub c_out: usize,
    pub weight: Param<T>, // [c_in, 4*c_out], block (a,b) at offset (a*2+b)*c_out
    pub bias: Param<T>,   // [c_out]
}

pub struct ConvTranspose2x2Cache<T> {
    x: Vec<T>,
    h: usize,
    w: usize,
}

impl<T: Scalar> ConvTranspose2x2<T> {
    pub fn new(name: &str, c_in: usize, c_out: usize, rng: &mut Pcg32) -> Self {
        let fan_in = c_in as f64;
        Self {
            c_in,
            c_out,
            weight: Param::normal(
                format!("{name}.weight"),
                vec![c_in, 4 * c_out],
                (2.0 / fan_in).sqrt(),
                rng,
                true,
            ),
            bias: Param::zeros(format!("{name}.bias"), vec![c_out], false),
        }
    }

    pub fn forward(&self, x: &[T], h: usize, w: usize) -> (Vec<T>, ConvTranspose2x2Cache<T>) {
        debug_assert_eq!(x.len(), h * w * self.c_in);
        let mut gathered = vec![T::zero(); h * w * 4 * self.c_out];
        matmul(&x.to_vec(), &self.weight.w, h * w, self.c_in, 4 * self.c_out, &mut gathered);
        let (oh, ow) = (2 * h, 2 * w);
        let mut y = vec![T::zero(); oh * ow * self.c_out];
        for i in 0..h {
            for j in 0..w {
                let src = (i * w + j) * 4 * self.c_out;
                for a in 0..2 {
                    for b in 0..2 {
                        let dst = ((2 * i + a) * ow + 2 * j + b) * self.c_out;
                        let blk = src + (a * 2 + b) * self.c_out;
                        for c in 0..self.c_out {
                            y[dst + c] = gathered[blk + c] + self.bias.w[c];
                        }
                    }
                }
            }
        }
        (
            y,
            ConvTranspose2x2Cache {
                x: x.to_vec(),
                h,
                w,
            },
        )
    }

    pub fn backward(&mut self, cache: &ConvTranspose2x2Cache<T>, dy: &[T]) -> Vec<T> {
        let (h, w) = (cache.h, cache.w);
        let ow = 2 * w;
        let mut dg = vec![T::zero(); h * w * 4 * self.c_out];
        for i in 0..h {
            for j in 0..w {
                let dst = (i * w + j) * 4 * self.c_out;
                for a in 0..2 {
                    for b in 0..2 {
                        let src = ((2 * i + a) * ow + 2 * j + b) * self.c_out;
                        let blk = dst + (a * 2 + b) * self.c_out;
                        for c in 0..self.c_out {
                            let d = dy[src + c];
                            dg[blk + c] = d;
                            self.bias.g[c] += d;
                        }
                    }
                }
            }
        }
        matmul_tn_acc(&cache.x, &dg, self.c_in, h * w, 4 * self.c_out, &mut self.weight.g);
        let mut dx = vec![T::zero(); h * w * self.c_in];
        matmul_nt(&dg, &self.weight.w, h * w, 4 * self.c_out, self.c_in, &mut dx);
        dx
    }
}

impl<T: Scalar> Params<T> for ConvTranspose2x2<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        f(&self.weight);
        f(&self.bias);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}

// ---------------------------------------------------------------------------
// 2x2 average pooling
// ---------------------------------------------------------------------------

pub fn avgpool2_forward<T: Scalar>(x: &[T], h: usize, w: usize, c: usize) -> Vec<T> {
    debug_assert!(h % 2 == 0 && w % 2 == 0);
    let (oh, ow) = (h / 2, w / 2);
    let quarter = sc::<T>(0.25);
    let mut y = vec![T::zero(); oh * ow * c];
    for i in 0..oh {
        for j in 0..ow {
            let dst = (i * ow + j) * c;
            for (a, b) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                let src = ((2 * i + a) * w + 2 * j + b) * c;
                for ch in 0..c {
                    y[dst + ch] += x[src + ch];
                }
            }
            for ch in 0..c {
                y[dst + ch] = y[dst + ch] * quarter;
            }
        }
    }
    y
}

pub fn avgpool2_backward<T: Scalar>(dy: &[T], h: usize, w: usize, c: usize) -> Vec<T> {
    let (oh, ow) = (h / 2, w / 2);
    let quarter = sc::<T>(0.25);
    let mut dx = vec![T::zero(); h * w * c];
    for i in 0..oh {
        for j in 0..ow {
            let src = (i * ow + j) * c;
            for (a, b) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                let dst = ((2 * i + a) * w + 2 * j + b) * c;
                for ch in 0..c {
                    dx[dst + ch] = dy[src + ch] * quarter;
                }
            }
        }
    }
    dx
}

// ---------------------------------------------------------------------------
// Linear
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct Linear<T> {
    pub d_in: usize,
    pub d_out: usize,
    pub weight: Param<T>, // [d_out, d_in]
    pub bias: Param<T>,   // [d_out]
}

pub struct LinearCache<T> {
    x: Vec<T>,
    n: usize,
}

impl<T: Scalar> Linear<T> {
    pub fn new(name: &str, d_in: usize, d_out: usize, std: f64, rng: &mut Pcg32) -> Self {
        Self {
            d_in,
            d_out,
            weight: Param::normal(format!("{name}.weight"), vec![d_out, d_in], std, rng, true),
            bias: Param::zeros(format!("{name}.bias"), vec![d_out], false),
        }
    }

    pub fn forward(&self, x: &[T]) -> (Vec<T>, LinearCache<T>) {
        debug_assert_eq!(x.len() % self.d_in, 0);
        let n = x.len() / self.d_in;
        let mut y = vec![T::zero(); n * self.d_out];
        matmul_nt(x, &self.weight.w, n, self.d_in, self.d_out, &mut y);
        for row in 0..n {
            for c in 0..self.d_out {
                y[row * self.d_out + c] += self.bias.w[c];
            }
        }
        (y, LinearCache { x: x.to_vec(), n })
    }

    pub fn backward(&mut self, cache: &LinearCache<T>, dy: &[T]) -> Vec<T> {
        let n = cache.n;
        matmul_tn_acc(dy, &cache.x, self.d_out, n, self.d_in, &mut self.weight.g);
        for row in 0..n {
            for c in 0..self.d_out {
                self.bias.g[c] += dy[row * self.d_out + c];
            }
        }
        let mut dx = vec![T::zero(); n * self.d_in];
        matmul_acc(dy, &self.weight.w, n, self.d_out, self.d_in, &mut dx);
        dx
    }
}

impl<T: Scalar> Params<T> for Linear<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        f(&self.weight);
        f(&self.bias);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}

// ---------------------------------------------------------------------------
// LayerNorm over the last dimension
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct LayerNorm<T> {
    pub dim: usize,
    pub gamma: Param<T>,
    pub beta: Param<T>,
}

pub struct LayerNormCache<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
}

impl<T: Scalar> LayerNorm<T> {
    const EPS: f64 = 1e-5;

    pub fn new(name: &str, dim: usize) -> Self {
        let mut gamma = Param::zeros(format!("{name}.gamma"), vec![dim], false);
        gamma.w.fill(T::one());
        Self {
            dim,
            gamma,
            beta: Param::zeros(format!("{name}.beta"), vec![dim], false),
        }
    }

    pub fn forward(&self, x: &[T]) -> (Vec<T>, LayerNormCache<T>) {
        let d = self.dim;
        let n = x.len() / d;
        let inv_d = sc::<T>(1.0 / d as f64);
        let eps = sc::<T>(Self::EPS);
        let mut y = vec![T::zero(); x.len()];
        let mut xhat = vec![T::zero(); x.len()];
        let mut inv_std = vec![T::zero(); n];
        for row in 0..n {
            let xs = &x[row * d..(row + 1) * d];
            let mut mu = T::zero();
            for &v in xs {
                mu += v;
            }
            mu = mu * inv_d;
            let mut var = T::zero();
            for &v in xs {
                let c = v - mu;
                var += c * c;
            }
            var = var * inv_d;
            let inv = T::one() / (var + eps).sqrt();
            inv_std[row] = inv;
            for i in 0..d {
                let xh = (xs[i] - mu) * inv;
                xhat[row * d + i] = xh;
                y[row * d + i] = self.gamma.w[i] * xh + self.beta.w[i];
            }
        }
        (y, LayerNormCache { xhat, inv_std })
    }

    pub fn backward(&mut self, cache: &LayerNormCache<T>, dy: &[T]) -> Vec<T> {
        let d = self.dim;
        let n = dy.len() / d;
        let inv_d = sc::<T>(1.0 / d as f64);
        let mut dx = vec![T::zero(); dy.len()];
        for row in 0..n {
            let off = row * d;
            let mut mean_dxhat = T::zero();
            let mut mean_dxhat_xhat = T::zero();
            for i in 0..d {
                let dxh = dy[off + i] * self.gamma.w[i];
                mean_dxhat += dxh;
                mean_dxhat_xhat += dxh * cache.xhat[off + i];
                self.gamma.g[i] += dy[off + i] * cache.xhat[off + i];
                self.beta.g[i] += dy[off + i];
            }
            mean_dxhat = mean_dxhat * inv_d;
            mean_dxhat_xhat = mean_dxhat_xhat * inv_d;
            let inv = cache.inv_std[row];
            for i in 0..d {
                let dxh = dy[off + i] * self.gamma.w[i];
                dx[off + i] = inv * (dxh - mean_dxhat - cache.xhat[off + i] * mean_dxhat_xhat);
            }
        }
        dx
    }
}

impl<T: Scalar> Params<T> for LayerNorm<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        f(&self.gamma);
        f(&self.beta);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.gamma);
        f(&mut self.beta);
    }
}

// ---------------------------------------------------------------------------
// Multi-head self-attention
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct MultiHeadAttention<T> {
    pub dim: usize,
    pub heads: usize,
    pub wq: Linear<T>,
    pub wk: Linear<T>,
    pub wv: Linear<T>,
    pub wo: Linear<T>,
}

pub struct AttentionCache<T> {
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    probs: Vec<Vec<T>>, // per head, n x n
    n: usize,
    cq: LinearCache<T>,
    ck: LinearCache<T>,
    cv: LinearCache<T>,
    co: LinearCache<T>,
}

impl<T: Scalar> MultiHeadAttention<T> {
    pub fn new(name: &str, dim: usize, heads: usize, rng: &mut Pcg32) -> Self {
        assert_eq!(dim % heads, 0);
        let std = 0.02;
        Self {
            dim,
            heads,
            wq: Linear::new(&format!("{name}.wq"), dim, dim, std, rng),
            wk: Linear::new(&format!("{name}.wk"), dim, dim, std, rng),
            wv: Linear::new(&format!("{name}.wv"), dim, dim, std, rng),
            wo: Linear::new(&format!("{name}.wo"), dim, dim, std, rng),
        }
    }

    fn head<'a>(buf: &'a [T], n: usize, dim: usize, dh: usize, h: usize) -> Vec<T> {
        let mut out = vec![T::zero(); n * dh];
        for row in 0..n {
            out[row * dh..(row + 1) * dh]
                .copy_from_slice(&buf[row * dim + h * dh..row * dim + (h + 1) * dh]);
        }
        out
    }

    pub fn forward(&self, x: &[T]) -> (Vec<T>, AttentionCache<T>) {
        let dim = self.dim;
        let n = x.len() / dim;
        let dh = dim / self.heads;
        let scale = sc::<T>(1.0 / (dh as f64).sqrt());

        let (q, cq) = self.wq.forward(x);
        let (k, ck) = self.wk.forward(x);
        let (v, cv) = self.wv.forward(x);

        let mut ctx = vec![T::zero(); n * dim];
        let mut probs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = Self::head(&q, n, dim, dh, h);
            let kh = Self::head(&k, n, dim, dh, h);
            let vh = Self::head(&v, n, dim, dh, h);
            let mut scores = vec![T::zero(); n * n];
            matmul_nt(&qh, &kh, n, dh, n, &mut scores);
            for s in scores.iter_mut() {
                *s = *s * scale;
            }
            // row softmax with max subtraction
            for row in 0..n {
                let r = &mut scores[row * n..(row + 1) * n];
                let mut mx = r[0];
                for &v in r.iter() {
                    if v > mx {
                        mx = v;
                    }
                }
                let mut sum = T::zero();
                for v in r.iter_mut() {
                    *v = (*v - mx).exp();
                    sum += *v;
                }
                let inv = T::one() / sum;
                for v in r.iter_mut() {
                    *v = *v * inv;
                }
            }
            let mut ctxh = vec![T::zero(); n * dh];
            matmul(&scores, &vh, n, n, dh, &mut ctxh);
            for row in 0..n {
                ctx[row * dim + h * dh..row * dim + (h + 1) * dh]
                    .copy_from_slice(&ctxh[row * dh..(row + 1) * dh]);
            }
            probs.push(scores);
        }
        let (y, co) = self.wo.forward(&ctx);
        (
            y,
            AttentionCache {
                q,
                k,
                v,
                probs,
                n,
                cq,
                ck,
                cv,
                co,
            },
        )
    }

    pub fn backward(&mut self, cache: &AttentionCache<T>, dy: &[T]) -> Vec<T> {
        let dim = self.dim;
        let n = cache.n;
        let dh = dim / self.heads;
        let scale = sc::<T>(1.0 / (dh as f64).sqrt());

        let dctx = self.wo.backward(&cache.co, dy);

        let mut dq = vec![T::zero(); n * dim];
        let mut dk = vec![T::zero(); n * dim];
        let mut dv = vec![T::zero(); n * dim];
        for h in 0..self.heads {
            let qh = Self::head(&cache.q, n, dim, dh, h);
            let kh = Self::head(&cache.k, n, dim, dh, h);
            let vh = Self::head(&cache.v, n, dim, dh, h);
            let dctxh = Self::head(&dctx, n, dim, dh, h);
            let p = &cache.probs[h];

            // dP = dCtx · Vᵀ ; dV = Pᵀ · dCtx
            let mut dp = vec![T::zero(); n * n];
            matmul_nt(&dctxh, &vh, n, dh, n, &mut dp);
            let mut dvh = vec![T::zero(); n * dh];
            matmul_tn_acc(p, &dctxh, n, n, dh, &mut dvh);

            // softmax rows: dS = P ∘ (dP − rowdot(dP, P))
            let mut ds = vec![T::zero(); n * n];
            for row in 0..n {
                let pr = &p[row * n..(row + 1) * n];
                let dpr = &dp[row * n..(row + 1) * n];
                let mut dot = T::zero();
                for i in 0..n {
                    dot += pr[i] * dpr[i];
                }
                for i in 0..n {
                    ds[row * n + i] = pr[i] * (dpr[i] - dot) * scale;
                }
            }

            // dQ = dS · K ; dK = dSᵀ · Q
            let mut dqh = vec![T::zero(); n * dh];
            matmul(&ds, &kh, n, n, dh, &mut dqh);
            let mut dkh = vec![T::zero(); n * dh];
            matmul_tn_acc(&ds, &qh, n, n, dh, &mut dkh);

            for row in 0..n {
                for i in 0..dh {
                    dq[row * dim + h * dh + i] = dqh[row * dh + i];
                    dk[row * dim + h * dh + i] = dkh[row * dh + i];
                    dv[row * dim + h * dh + i] = dvh[row * dh + i];
                }
            }
        }

        let mut dx = self.wq.backward(&cache.cq, &dq);
        let dxk = self.wk.backward(&cache.ck, &dk);
        let dxv = self.wv.backward(&cache.cv, &dv);
        for i in 0..dx.len() {
            dx[i] += dxk[i] + dxv[i];
        }
        dx
    }
}

impl<T: Scalar> Params<T> for MultiHeadAttention<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.wq.visit(f);
        self.wk.visit(f);
        self.wv.visit(f);
        self.wo.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.wq.visit_mut(f);
        self.wk.visit_mut(f);
        self.wv.visit_mut(f);
        self.wo.visit_mut(f);
    }
}

// ---------------------------------------------------------------------------
// MLP (fc -> SiLU -> fc)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct Mlp<T> {
    pub fc1: Linear<T>,
    pub fc2: Linear<T>,
}

pub struct MlpCache<T> {
    c1: LinearCache<T>,
    pre: Vec<T>,
    c2: LinearCache<T>,
}

impl<T: Scalar> Mlp<T> {
    pub fn new(name: &str, dim: usize, hidden: usize, rng: &mut Pcg32) -> Self {
        Self {
            fc1: Linear::new(&format!("{name}.fc1"), dim, hidden, 0.02, rng),
            fc2: Linear::new(&format!("{name}.fc2"), hidden, dim, 0.02, rng),
        }
    }

    pub fn forward(&self, x: &[T]) -> (Vec<T>, MlpCache<T>) {
        let (mut h, c1) = self.fc1.forward(x);
        let pre = silu_forward(&mut h);
        let (y, c2) = self.fc2.forward(&h);
        (y, MlpCache { c1, pre, c2 })
    }

    pub fn backward(&mut self, cache: &MlpCache<T>, dy: &[T]) -> Vec<T> {
        let mut dh = self.fc2.backward(&cache.c2, dy);
        silu_backward(&cache.pre, &mut dh);
        self.fc1.backward(&cache.c1, &dh)
    }
}

impl<T: Scalar> Params<T> for Mlp<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.fc1.visit(f);
        self.fc2.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.fc1.visit_mut(f);
        self.fc2.visit_mut(f);
    }
}

// ---------------------------------------------------------------------------
// Pre-norm transformer block
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct TransformerBlock<T> {
    pub ln1: LayerNorm<T>,
    pub attn: MultiHeadAttention<T>,
    pub ln2: LayerNorm<T>,
    pub mlp: Mlp<T>,
}

pub struct TransformerBlockCache<T> {
    cl1: LayerNormCache<T>,
    ca: AttentionCache<T>,
    cl2: LayerNormCache<T>,
    cm: MlpCache<T>,
}

impl<T: Scalar> TransformerBlock<T> {
    pub fn new(name: &str, dim: usize, heads: usize, mlp_hidden: usize, rng: &mut Pcg32) -> Self {
        Self {
            ln1: LayerNorm::new(&format!("{name}.ln1"), dim),
            attn: MultiHeadAttention::new(&format!("{name}.attn"), dim, heads, rng),
            ln2: LayerNorm::new(&format!("{name}.ln2"), dim),
            mlp: Mlp::new(&format!("{name}.mlp"), dim, mlp_hidden, rng),
        }
    }

    pub fn forward(&self, x: &[T]) -> (Vec<T>, TransformerBlockCache<T>) {
        let (a, cl1) = self.ln1.forward(x);
        let (attn_out, ca) = self.attn.forward(&a);
        let x1: Vec<T> = x.iter().zip(&attn_out).map(|(&a, &b)| a + b).collect();
        let (b, cl2) = self.ln2.forward(&x1);
        let (mlp_out, cm) = self.mlp.forward(&b);
        let y: Vec<T> = x1.iter().zip(&mlp_out).map(|(&a, &b)| a + b).collect();
        (y, TransformerBlockCache { cl1, ca, cl2, cm })
    }

    pub fn backward(&mut self, cache: &TransformerBlockCache<T>, dy: &[T]) -> Vec<T> {
        let dmlp_in = self.mlp.backward(&cache.cm, dy);
        let dx1_from_ln2 = self.ln2.backward(&cache.cl2, &dmlp_in);
        let dx1: Vec<T> = dy.iter().zip(&dx1_from_ln2).map(|(&a, &b)| a + b).collect();
        let dattn_in = self.attn.backward(&cache.ca, &dx1);
        let dx_from_ln1 = self.ln1.backward(&cache.cl1, &dattn_in);
        dx1.iter().zip(&dx_from_ln1).map(|(&a, &b)| a + b).collect()
    }
}

impl<T: Scalar> Params<T> for TransformerBlock<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.ln1.visit(f);
        self.attn.visit(f);
        self.ln2.visit(f);
        self.mlp.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.ln1.visit_mut(f);
        self.attn.visit_mut(f);
        self.ln2.visit_mut(f);
        self.mlp.visit_mut(f);
    }
}

// ---------------------------------------------------------------------------
// Patch embedding (p x p patches of an HWC image -> token rows)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct PatchEmbed<T> {
    pub patch: usize,
    pub c_in: usize,
    pub proj: Linear<T>,
}

pub struct PatchEmbedCache<T> {
    proj: LinearCache<T>,
    h: usize,
    w: usize,
}

impl<T: Scalar> PatchEmbed<T> {
    pub fn new(name: &str, patch: usize, c_in: usize, dim: usize, rng: &mut Pcg32) -> Self {
        let fan_in = (patch * patch * c_in) as f64;
        Self {
            patch,
            c_in,
            proj: Linear::new(&format!("{name}.proj"), patch * patch * c_in, dim, (1.0 / fan_in).sqrt(), rng),
        }
    }

    /// Tokens in row-major grid order; patch pixels in [py, px, c] order.
    pub fn forward(&self, x: &[T], h: usize, w: usize) -> (Vec<T>, PatchEmbedCache<T>) {
        let p = self.patch;
        debug_assert!(h % p == 0 && w % p == 0);
        let (th, tw) = (h / p, w / p);
        let plen = p * p * self.c_in;
        let mut patches = vec![T::zero(); th * tw * plen];
        for ti in 0..th {
            for tj in 0..tw {
                let base = (ti * tw + tj) * plen;
                for py in 0..p {
                    let src = ((ti * p + py) * w + tj * p) * self.c_in;
                    let dst = base + py * p * self.c_in;
                    patches[dst..dst + p * self.c_in]
                        .copy_from_slice(&x[src..src + p * self.c_in]);
                }
            }
        }
        let (y, proj) = self.proj.forward(&patches);
        (y, PatchEmbedCache { proj, h, w })
    }

    pub fn backward(&mut self, cache: &PatchEmbedCache<T>, dy: &[T]) -> Vec<T> {
        let dpatches = self.proj.backward(&cache.proj, dy);
        let p = self.patch;
        let (h, w) = (cache.h, cache.w);
        let (th, tw) = (h / p, w / p);
        let plen = p * p * self.c_in;
        let mut dx = vec![T::zero(); h * w * self.c_in];
        for ti in 0..th {
            for tj in 0..tw {
                let base = (ti * tw + tj) * plen;
                for py in 0..p {
                    let dst = ((ti * p + py) * w + tj * p) * self.c_in;
                    let src = base + py * p * self.c_in;
                    dx[dst..dst + p * self.c_in]
                        .copy_from_slice(&dpatches[src..src + p * self.c_in]);
                }
            }
        }
        dx
    }
}

impl<T: Scalar> Params<T> for PatchEmbed<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.proj.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.proj.visit_mut(f);
    }
}

// ---------------------------------------------------------------------------
// AdamW with decoupled weight decay
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(weight_decay: f64) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// One update over every parameter of `model` at learning rate `lr`.
    /// Moment state is kept in f64 and matched to parameters by visit order.
    pub fn step<T: Scalar, M: Params<T> + ?Sized>(&mut self, model: &mut M, lr: f64) {
        self.t += 1;
        let t = self.t as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let mut idx = 0usize;
        let (beta1, beta2, eps, wd) = (self.beta1, self.beta2, self.eps, self.weight_decay);
        let (ms, vs) = (&mut self.m, &mut self.v);
        model.visit_mut(&mut |p| {
            if ms.len() == idx {
                ms.push(vec![0.0; p.len()]);
                vs.push(vec![0.0; p.len()]);
            }
            let m = &mut ms[idx];
            let v = &mut vs[idx];
            assert_eq!(m.len(), p.len(), "optimizer state shape drift");
            for i in 0..p.len() {
                let g = p.g[i].to_f64_s();
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                let mut w = p.w[i].to_f64_s();
                w -= lr * (mhat / (vhat.sqrt() + eps));
                if p.decay {
                    w -= lr * wd * w;
                }
                p.w[i] = sc::<T>(w);
            }
            idx += 1;
        });
    }
}

// ---------------------------------------------------------------------------
// Finite-difference gradient checking
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_param: String,
    pub checked: usize,
}

/// Compare analytic gradients (already accumulated in `model`) against central
/// finite differences of `loss_fn`. Relative error uses an absolute floor so
/// near-zero gradient pairs compare on absolute terms.
pub fn grad_check<T: Scalar, M: Params<T> + ?Sized>(
    model: &mut M,
    mut loss_fn: impl FnMut(&mut M) -> f64,
    step: f64,
) -> GradCheckReport {
    let analytic = export_grads(model);
    let base = export_params(model);
    let mut flat = base.clone();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_param: String::new(),
        checked: 0,
    };
    let mut offset = 0usize;
    for (name, grads) in &analytic {
        for (i, g) in grads.iter().enumerate() {
            let idx = offset + i;
            let orig = base[idx];
            flat[idx] = orig + sc::<T>(step);
            import_params(model, &flat);
            let lp = loss_fn(model);
            flat[idx] = orig - sc::<T>(step);
            import_params(model, &flat);
            let lm = loss_fn(model);
            flat[idx] = orig;
            let fd = (lp - lm) / (2.0 * step);
            let ad = g.to_f64_s();
            let denom = ad.abs().max(fd.abs()).max(1e-3);
            let rel = (ad - fd).abs() / denom;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst_param = format!("{name}[{i}] ad={ad:.3e} fd={fd:.3e}");
            }
            report.checked += 1;
        }
        offset += grads.len();
    }
    import_params(model, &base);
    report
}
