//! Single-sample CHW layers with explicit caches and hand-written backward passes.

use super::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self {
            c,
            h,
            w,
            data: vec![T::zero(); c * h * w],
        }
    }

    pub fn hw(&self) -> usize {
        self.h * self.w
    }

    pub fn add_assign(&mut self, other: &Tensor<T>) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ConvSpec {
    pub weight: usize,
    pub bias: usize,
    pub cin: usize,
    pub cout: usize,
    /// 1 or 3; 3x3 convolutions use zero padding of one pixel.
    pub k: usize,
}

pub struct ConvCache<T> {
    cols: Vec<T>,
    h: usize,
    w: usize,
}

fn im2col3<T: Scalar>(x: &Tensor<T>) -> Vec<T> {
    let (c, h, w) = (x.c, x.h, x.w);
    let hw = h * w;
    let mut cols = vec![T::zero(); c * 9 * hw];
    for ci in 0..c {
        let plane = &x.data[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[((ci * 9) + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &plane[sy as usize * w..][..w];
                    let dst = &mut row[y * w..][..w];
                    match kx {
                        0 => dst[1..].copy_from_slice(&src[..w - 1]),
                        1 => dst.copy_from_slice(src),
                        _ => dst[..w - 1].copy_from_slice(&src[1..]),
                    }
                }
            }
        }
    }
    cols
}

fn col2im3<T: Scalar>(cols: &[T], c: usize, h: usize, w: usize) -> Tensor<T> {
    let hw = h * w;
    let mut out = Tensor::zeros(c, h, w);
    for ci in 0..c {
        let plane = &mut out.data[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &cols[((ci * 9) + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[sy as usize * w..][..w];
                    let src = &row[y * w..][..w];
                    match kx {
                        0 => dst[..w - 1].iter_mut().zip(&src[1..]).for_each(|(d, &s)| *d += s),
                        1 => dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s),
                        _ => dst[1..].iter_mut().zip(&src[..w - 1]).for_each(|(d, &s)| *d += s),
                    }
                }
            }
        }
    }
    out
}

pub fn conv_forward<T: Scalar>(
    spec: &ConvSpec,
    params: &[Vec<T>],
    x: &Tensor<T>,
) -> (Tensor<T>, ConvCache<T>) {
    debug_assert_eq!(x.c, spec.cin);
    let hw = x.hw();
    let cols = if spec.k == 3 { im2col3(x) } else { x.data.clone() };
    let weight = &params[spec.weight];
    let bias = &params[spec.bias];
    let mut out = Tensor::zeros(spec.cout, x.h, x.w);
    for (co, row) in out.data.chunks_exact_mut(hw).enumerate() {
        row.fill(bias[co]);
    }
    T::gemm(false, false, spec.cout, hw, spec.cin * spec.k * spec.k, weight, &cols, T::one(), &mut out.data);
    (out, ConvCache { cols, h: x.h, w: x.w })
}

pub fn conv_backward<T: Scalar>(
    spec: &ConvSpec,
    params: &[Vec<T>],
    cache: &ConvCache<T>,
    dy: &Tensor<T>,
    grads: &mut [Vec<T>],
    need_input_grad: bool,
) -> Option<Tensor<T>> {
    let hw = cache.h * cache.w;
    let kdim = spec.cin * spec.k * spec.k;
    T::gemm(false, true, spec.cout, kdim, hw, &dy.data, &cache.cols, T::one(), &mut grads[spec.weight]);
    for (co, row) in dy.data.chunks_exact(hw).enumerate() {
        let s: T = row.iter().copied().sum();
        grads[spec.bias][co] += s;
    }
    if !need_input_grad {
        return None;
    }
    let mut dcols = vec![T::zero(); kdim * hw];
    T::gemm(true, false, kdim, hw, spec.cout, &params[spec.weight], &dy.data, T::zero(), &mut dcols);
    Some(if spec.k == 3 {
        col2im3(&dcols, spec.cin, cache.h, cache.w)
    } else {
        Tensor {
            c: spec.cin,
            h: cache.h,
            w: cache.w,
            data: dcols,
        }
    })
}

#[derive(Debug, Clone, Copy)]
pub struct NormSpec {
    pub gamma: usize,
    pub beta: usize,
    pub channels: usize,
    pub groups: usize,
}

pub const NORM_EPS: f64 = 1e-5;

pub struct NormCache<T> {
    xhat: Vec<T>,
    rstd: Vec<T>,
}

pub fn norm_forward<T: Scalar>(
    spec: &NormSpec,
    params: &[Vec<T>],
    x: &Tensor<T>,
) -> (Tensor<T>, NormCache<T>) {
    let hw = x.hw();
    let per_group = spec.channels / spec.groups * hw;
    let n = T::from_usize(per_group).unwrap();
    let eps = T::lit(NORM_EPS);
    let mut xhat = vec![T::zero(); x.data.len()];
    let mut rstd = Vec::with_capacity(spec.groups);
    for (src, dst) in x.data.chunks_exact(per_group).zip(xhat.chunks_exact_mut(per_group)) {
        let mean = src.iter().copied().sum::<T>() / n;
        let var = src.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let r = T::one() / (var + eps).sqrt();
        for (d, &s) in dst.iter_mut().zip(src) {
            *d = (s - mean) * r;
        }
        rstd.push(r);
    }
    let (gamma, beta) = (&params[spec.gamma], &params[spec.beta]);
    let mut out = Tensor::zeros(x.c, x.h, x.w);
    for (c, (o, xh)) in out
        .data
        .chunks_exact_mut(hw)
        .zip(xhat.chunks_exact(hw))
        .enumerate()
    {
        for (ov, &xv) in o.iter_mut().zip(xh) {
            *ov = gamma[c] * xv + beta[c];
        }
    }
    (out, NormCache { xhat, rstd })
}

pub fn norm_backward<T: Scalar>(
    spec: &NormSpec,
    params: &[Vec<T>],
    cache: &NormCache<T>,
    dy: &Tensor<T>,
    grads: &mut [Vec<T>],
) -> Tensor<T> {
    let hw = dy.hw();
    let gamma = &params[spec.gamma];
    let mut dxhat = vec![T::zero(); dy.data.len()];
    for c in 0..spec.channels {
        let d = &dy.data[c * hw..(c + 1) * hw];
        let xh = &cache.xhat[c * hw..(c + 1) * hw];
        let mut dg = T::zero();
        let mut db = T::zero();
        for ((&dv, &xv), dx) in d.iter().zip(xh).zip(&mut dxhat[c * hw..(c + 1) * hw]) {
            dg += dv * xv;
            db += dv;
            *dx = dv * gamma[c];
        }
        grads[spec.gamma][c] += dg;
        grads[spec.beta][c] += db;
    }
    let per_group = spec.channels / spec.groups * hw;
    let n = T::from_usize(per_group).unwrap();
    let mut dx = Tensor::zeros(dy.c, dy.h, dy.w);
    for (g, ((dxh, xh), out)) in dxhat
        .chunks_exact(per_group)
        .zip(cache.xhat.chunks_exact(per_group))
        .zip(dx.data.chunks_exact_mut(per_group))
        .enumerate()
    {
        let sum_d: T = dxh.iter().copied().sum();
        let sum_dx: T = dxh.iter().zip(xh).map(|(&a, &b)| a * b).sum();
        let scale = cache.rstd[g] / n;
        for ((o, &d), &x) in out.iter_mut().zip(dxh).zip(xh) {
            *o = scale * (n * d - sum_d - x * sum_dx);
        }
    }
    dx
}

#[inline]
fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

pub fn silu<T: Scalar>(x: &[T]) -> Vec<T> {
    x.iter().map(|&v| v * sigmoid(v)).collect()
}

/// Multiplies `dy` in place by `silu'(x)`.
pub fn silu_backward<T: Scalar>(x: &[T], dy: &mut [T]) {
    for (d, &v) in dy.iter_mut().zip(x) {
        let s = sigmoid(v);
        *d *= s * (T::one() + v * (T::one() - s));
    }
}

pub fn silu_tensor<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    Tensor {
        data: silu(&x.data),
        ..*x
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LinearSpec {
    pub weight: usize,
    pub bias: usize,
    pub cin: usize,
    pub cout: usize,
}

pub fn linear_forward<T: Scalar>(spec: &LinearSpec, params: &[Vec<T>], x: &[T]) -> Vec<T> {
    let w = &params[spec.weight];
    let b = &params[spec.bias];
    (0..spec.cout)
        .map(|o| {
            let row = &w[o * spec.cin..(o + 1) * spec.cin];
            b[o] + row.iter().zip(x).map(|(&a, &v)| a * v).sum::<T>()
        })
        .collect()
}

/// Accumulates parameter grads and adds `W^T dy` into `dx`.
pub fn linear_backward<T: Scalar>(
    spec: &LinearSpec,
    params: &[Vec<T>],
    x: &[T],
    dy: &[T],
    grads: &mut [Vec<T>],
    dx: &mut [T],
) {
    let w = &params[spec.weight];
    for (o, &d) in dy.iter().enumerate() {
        grads[spec.bias][o] += d;
        let gw = &mut grads[spec.weight][o * spec.cin..(o + 1) * spec.cin];
        for (g, &v) in gw.iter_mut().zip(x) {
            *g += d * v;
        }
        for (dxi, &wv) in dx.iter_mut().zip(&w[o * spec.cin..(o + 1) * spec.cin]) {
            *dxi += d * wv;
        }
    }
}

pub fn avg_pool2<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let (h2, w2) = (x.h / 2, x.w / 2);
    let quarter = T::lit(0.25);
    let mut out = Tensor::zeros(x.c, h2, w2);
    for c in 0..x.c {
        let src = &x.data[c * x.hw()..];
        for y in 0..h2 {
            for xx in 0..w2 {
                let i = 2 * y * x.w + 2 * xx;
                out.data[c * h2 * w2 + y * w2 + xx] =
                    (src[i] + src[i + 1] + src[i + x.w] + src[i + x.w + 1]) * quarter;
            }
        }
    }
    out
}

pub fn avg_pool2_backward<T: Scalar>(dy: &Tensor<T>) -> Tensor<T> {
    let (h, w) = (dy.h * 2, dy.w * 2);
    let quarter = T::lit(0.25);
    let mut out = Tensor::zeros(dy.c, h, w);
    for c in 0..dy.c {
        for y in 0..h {
            for x in 0..w {
                out.data[c * h * w + y * w + x] = dy.data[c * dy.hw() + (y / 2) * dy.w + x / 2] * quarter;
            }
        }
    }
    out
}

pub fn upsample2<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let (h, w) = (x.h * 2, x.w * 2);
    let mut out = Tensor::zeros(x.c, h, w);
    for c in 0..x.c {
        for y in 0..h {
            for xx in 0..w {
                out.data[c * h * w + y * w + xx] = x.data[c * x.hw() + (y / 2) * x.w + xx / 2];
            }
        }
    }
    out
}

pub fn upsample2_backward<T: Scalar>(dy: &Tensor<T>) -> Tensor<T> {
    let (h2, w2) = (dy.h / 2, dy.w / 2);
    let mut out = Tensor::zeros(dy.c, h2, w2);
    for c in 0..dy.c {
        for y in 0..dy.h {
            for x in 0..dy.w {
                out.data[c * h2 * w2 + (y / 2) * w2 + x / 2] += dy.data[c * dy.hw() + y * dy.w + x];
            }
        }
    }
    out
}

pub fn concat<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    debug_assert!(a.h == b.h && a.w == b.w);
    let mut data = Vec::with_capacity(a.data.len() + b.data.len());
    data.extend_from_slice(&a.data);
    data.extend_from_slice(&b.data);
    Tensor {
        c: a.c + b.c,
        h: a.h,
        w: a.w,
        data,
    }
}

pub fn split<T: Scalar>(x: Tensor<T>, first: usize) -> (Tensor<T>, Tensor<T>) {
    let at = first * x.hw();
    let mut head = x.data;
    let tail = head.split_off(at);
    (
        Tensor {
            c: first,
            h: x.h,
            w: x.w,
            data: head,
        },
        Tensor {
            c: x.c - first,
            h: x.h,
            w: x.w,
            data: tail,
        },
    )
}
