//! Forward and backward kernels for the heavier tape operations.

use crate::par;
use crate::tensor::{invalid, Real, Shape, TensorError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Padding {
    /// Output extent `ceil(h / stride)`, padding split with the smaller half on top/left.
    Same,
    /// No padding, output extent `floor((h - k) / stride) + 1`.
    Valid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub input: Shape,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad_top: usize,
    pub pad_left: usize,
    pub output: Shape,
}

impl ConvGeom {
    pub fn new(
        input: Shape,
        kernel: Shape,
        bias: Shape,
        stride: usize,
        padding: Padding,
    ) -> Result<Self, TensorError> {
        let (kh, kw, cin, cout) = (kernel.n, kernel.h, kernel.w, kernel.c);
        if kh == 0 || kw == 0 {
            return Err(invalid("conv2d", format!("empty kernel {kernel}")));
        }
        if stride == 0 {
            return Err(invalid("conv2d", "stride must be at least 1"));
        }
        if input.c != cin {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                left: input,
                right: kernel,
            });
        }
        if bias != Shape::vector(1, cout) {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d bias",
                left: kernel,
                right: bias,
            });
        }
        let (oh, ow, pad_top, pad_left) = match padding {
            Padding::Same => {
                let oh = input.h.div_ceil(stride);
                let ow = input.w.div_ceil(stride);
                let ph = ((oh.max(1) - 1) * stride + kh).saturating_sub(input.h);
                let pw = ((ow.max(1) - 1) * stride + kw).saturating_sub(input.w);
                (oh, ow, ph / 2, pw / 2)
            }
            Padding::Valid => {
                if input.h < kh || input.w < kw {
                    return Err(TensorError::ShapeMismatch {
                        op: "conv2d (valid padding needs input at least kernel size)",
                        left: input,
                        right: kernel,
                    });
                }
                ((input.h - kh) / stride + 1, (input.w - kw) / stride + 1, 0, 0)
            }
        };
        Ok(ConvGeom {
            input,
            kh,
            kw,
            stride,
            pad_top,
            pad_left,
            output: Shape::new(input.n, oh, ow, cout),
        })
    }

    #[inline]
    fn source(&self, out_pos: usize, k: usize, pad: usize, extent: usize) -> Option<usize> {
        let p = (out_pos * self.stride + k).checked_sub(pad)?;
        (p < extent).then_some(p)
    }
}

pub(crate) fn conv2d_forward<T: Real>(x: &[T], w: &[T], b: &[T], g: &ConvGeom) -> Vec<T> {
    let o = g.output;
    let cin = g.input.c;
    let cout = o.c;
    let mut out = vec![T::zero(); o.numel()];
    let row = o.w * cout;
    par::for_each_chunk(&mut out, row, row * g.kh * g.kw * cin, |r, chunk| {
        let n = r / o.h;
        let oy = r % o.h;
        for ox in 0..o.w {
            let acc = &mut chunk[ox * cout..(ox + 1) * cout];
            acc.copy_from_slice(b);
            for ky in 0..g.kh {
                let Some(iy) = g.source(oy, ky, g.pad_top, g.input.h) else {
                    continue;
                };
                for kx in 0..g.kw {
                    let Some(ix) = g.source(ox, kx, g.pad_left, g.input.w) else {
                        continue;
                    };
                    let xbase = g.input.index(n, iy, ix, 0);
                    let wbase = (ky * g.kw + kx) * cin * cout;
                    for ci in 0..cin {
                        let xv = x[xbase + ci];
                        let wrow = &w[wbase + ci * cout..wbase + (ci + 1) * cout];
                        for (a, &wv) in acc.iter_mut().zip(wrow) {
                            *a += xv * wv;
                        }
                    }
                }
            }
        }
    });
    out
}

pub(crate) fn conv2d_backward_input<T: Real>(w: &[T], dy: &[T], g: &ConvGeom) -> Vec<T> {
    let i = g.input;
    let o = g.output;
    let (cin, cout) = (i.c, o.c);
    let mut dx = vec![T::zero(); i.numel()];
    let per_sample = i.h * i.w * cin;
    let work = o.h * o.w * g.kh * g.kw * cin * cout;
    par::for_each_chunk(&mut dx, per_sample, work, |n, chunk| {
        for oy in 0..o.h {
            for ox in 0..o.w {
                let gbase = o.index(n, oy, ox, 0);
                let grow = &dy[gbase..gbase + cout];
                for ky in 0..g.kh {
                    let Some(iy) = g.source(oy, ky, g.pad_top, i.h) else {
                        continue;
                    };
                    for kx in 0..g.kw {
                        let Some(ix) = g.source(ox, kx, g.pad_left, i.w) else {
                            continue;
                        };
                        let xbase = (iy * i.w + ix) * cin;
                        let wbase = (ky * g.kw + kx) * cin * cout;
                        for ci in 0..cin {
                            let wrow = &w[wbase + ci * cout..wbase + (ci + 1) * cout];
                            let mut dot = T::zero();
                            for (&wv, &gv) in wrow.iter().zip(grow) {
                                dot += wv * gv;
                            }
                            chunk[xbase + ci] += dot;
                        }
                    }
                }
            }
        }
    });
    dx
}

pub(crate) fn conv2d_backward_weight<T: Real>(x: &[T], dy: &[T], g: &ConvGeom) -> Vec<T> {
    let i = g.input;
    let o = g.output;
    let (cin, cout) = (i.c, o.c);
    let mut dw = vec![T::zero(); g.kh * g.kw * cin * cout];
    let work = o.n * o.h * o.w * cout;
    par::for_each_chunk(&mut dw, cout, work, |r, acc| {
        let ci = r % cin;
        let kx = (r / cin) % g.kw;
        let ky = r / (cin * g.kw);
        for n in 0..o.n {
            for oy in 0..o.h {
                let Some(iy) = g.source(oy, ky, g.pad_top, i.h) else {
                    continue;
                };
                for ox in 0..o.w {
                    let Some(ix) = g.source(ox, kx, g.pad_left, i.w) else {
                        continue;
                    };
                    let xv = x[i.index(n, iy, ix, ci)];
                    let gbase = o.index(n, oy, ox, 0);
                    for (a, &gv) in acc.iter_mut().zip(&dy[gbase..gbase + cout]) {
                        *a += xv * gv;
                    }
                }
            }
        }
    });
    dw
}

pub(crate) fn conv2d_backward_bias<T: Real>(dy: &[T], cout: usize) -> Vec<T> {
    let mut acc = vec![0.0f64; cout];
    if cout > 0 {
        for px in dy.chunks_exact(cout) {
            for (a, &g) in acc.iter_mut().zip(px) {
                *a += g.f64();
            }
        }
    }
    acc.into_iter().map(T::of).collect()
}

/// Per-(sample, channel) spatial mean, accumulated in f64.
pub(crate) fn spatial_mean<T: Real>(x: &[T], s: Shape) -> Vec<f64> {
    let mut mean = vec![0.0f64; s.n * s.c];
    let hw = s.h * s.w;
    if s.c == 0 {
        return mean;
    }
    for n in 0..s.n {
        let m = &mut mean[n * s.c..(n + 1) * s.c];
        for px in x[n * hw * s.c..(n + 1) * hw * s.c].chunks_exact(s.c) {
            for (a, &v) in m.iter_mut().zip(px) {
                *a += v.f64();
            }
        }
        for a in m.iter_mut() {
            *a /= hw as f64;
        }
    }
    mean
}

/// Per-(sample, channel) population variance (divisor h·w), two-pass in f64.
pub(crate) fn spatial_variance<T: Real>(x: &[T], s: Shape, mean: &[f64]) -> Vec<f64> {
    let mut var = vec![0.0f64; s.n * s.c];
    let hw = s.h * s.w;
    if s.c == 0 {
        return var;
    }
    for n in 0..s.n {
        let m = &mean[n * s.c..(n + 1) * s.c];
        let v = &mut var[n * s.c..(n + 1) * s.c];
        for px in x[n * hw * s.c..(n + 1) * hw * s.c].chunks_exact(s.c) {
            for ((a, &xv), &mu) in v.iter_mut().zip(px).zip(m) {
                let d = xv.f64() - mu;
                *a += d * d;
            }
        }
        for a in v.iter_mut() {
            *a /= hw as f64;
        }
    }
    var
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PoolKind {
    Avg,
    Max,
}

/// Half-open input interval covered by output cell `i` of `out` cells over
/// an axis of length `len`: `[floor(i·len/out), ceil((i+1)·len/out))`.
#[inline]
pub(crate) fn pool_region(i: usize, len: usize, out: usize) -> (usize, usize) {
    (i * len / out, ((i + 1) * len).div_ceil(out))
}

/// Returns pooled values and, for max pooling, the flat input index chosen
/// for every output element (first maximum in row-major scan order).
pub(crate) fn adaptive_pool_forward<T: Real>(
    x: &[T],
    s: Shape,
    out: (usize, usize),
    kind: PoolKind,
) -> (Vec<T>, Vec<usize>) {
    let (oh, ow) = out;
    let o = Shape::new(s.n, oh, ow, s.c);
    let mut y = vec![T::zero(); o.numel()];
    let mut arg = match kind {
        PoolKind::Max => vec![0usize; o.numel()],
        PoolKind::Avg => Vec::new(),
    };
    for n in 0..s.n {
        for i in 0..oh {
            let (y0, y1) = pool_region(i, s.h, oh);
            for j in 0..ow {
                let (x0, x1) = pool_region(j, s.w, ow);
                for c in 0..s.c {
                    let oi = o.index(n, i, j, c);
                    match kind {
                        PoolKind::Avg => {
                            let mut acc = 0.0f64;
                            for yy in y0..y1 {
                                for xx in x0..x1 {
                                    acc += x[s.index(n, yy, xx, c)].f64();
                                }
                            }
                            y[oi] = T::of(acc / ((y1 - y0) * (x1 - x0)) as f64);
                        }
                        PoolKind::Max => {
                            let mut best = s.index(n, y0, x0, c);
                            for yy in y0..y1 {
                                for xx in x0..x1 {
                                    let k = s.index(n, yy, xx, c);
                                    if x[k] > x[best] {
                                        best = k;
                                    }
                                }
                            }
                            y[oi] = x[best];
                            arg[oi] = best;
                        }
                    }
                }
            }
        }
    }
    (y, arg)
}

pub(crate) fn adaptive_avg_pool_backward<T: Real>(
    dy: &[T],
    s: Shape,
    out: (usize, usize),
) -> Vec<T> {
    let (oh, ow) = out;
    let o = Shape::new(s.n, oh, ow, s.c);
    let mut dx = vec![T::zero(); s.numel()];
    for n in 0..s.n {
        for i in 0..oh {
            let (y0, y1) = pool_region(i, s.h, oh);
            for j in 0..ow {
                let (x0, x1) = pool_region(j, s.w, ow);
                let count = T::of(((y1 - y0) * (x1 - x0)) as f64);
                for c in 0..s.c {
                    let g = dy[o.index(n, i, j, c)] / count;
                    for yy in y0..y1 {
                        for xx in x0..x1 {
                            dx[s.index(n, yy, xx, c)] += g;
                        }
                    }
                }
            }
        }
    }
    dx
}

pub(crate) fn gelu(x: f64) -> f64 {
    x * normal_cdf(x)
}

pub(crate) fn gelu_grad(x: f64) -> f64 {
    normal_cdf(x) + x * (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

/// Logistic function clamped into the open unit interval at precision `T`.
pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    let x = x.f64();
    let y = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    let hi = T::one() - T::epsilon() / T::of(2.0);
    T::of(y).max(T::min_positive_value()).min(hi)
}
