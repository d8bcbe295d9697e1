//! Raw forward/backward numerical kernels on NCHW slices.
//!
//! Everything here is shape-unchecked; the tape validates extents before calling in.
//! Per-sample work is spread over rayon, and every cross-sample reduction happens
//! sequentially in sample order so results do not depend on the worker count.

use rayon::prelude::*;

/// `c = a · b + beta · c` for row-major matrices, with optional transposition of
/// either operand. `a` is `m×k` after transposition, `b` is `k×n`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    beta: f64,
    c: &mut [f64],
) {
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: the strides above address exactly the m×k, k×n and m×n row-major
    // blocks whose bounds are asserted in debug builds and guaranteed by callers.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    fn patch_len(&self) -> usize {
        self.c_in * self.k * self.k
    }

    fn out_pixels(&self) -> usize {
        self.oh * self.ow
    }
}

fn im2col(g: &ConvGeom, input: &[f64], cols: &mut [f64]) {
    let p = g.out_pixels();
    for ic in 0..g.c_in {
        let plane = &input[ic * g.h * g.w..(ic + 1) * g.h * g.w];
        for kh in 0..g.k {
            for kw in 0..g.k {
                let row = (ic * g.k + kh) * g.k + kw;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + kh) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kw) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= g.w as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im(g: &ConvGeom, cols: &[f64], grad_in: &mut [f64]) {
    let p = g.out_pixels();
    for ic in 0..g.c_in {
        let plane = &mut grad_in[ic * g.h * g.w..(ic + 1) * g.h * g.w];
        for kh in 0..g.k {
            for kw in 0..g.k {
                let row = (ic * g.k + kh) * g.k + kw;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + kh) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let line = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + kw) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            line[ix as usize] += src[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward(
    g: &ConvGeom,
    input: &[f64],
    weight: &[f64],
    bias: Option<&[f64]>,
    out: &mut [f64],
) {
    let in_len = g.c_in * g.h * g.w;
    let out_len = g.c_out * g.out_pixels();
    out.par_chunks_mut(out_len)
        .zip(input.par_chunks(in_len))
        .for_each(|(o, x)| {
            match bias {
                Some(b) => {
                    for (oc, row) in o.chunks_mut(g.out_pixels()).enumerate() {
                        row.fill(b[oc]);
                    }
                }
                None => o.fill(0.0),
            }
            if g.is_pointwise() {
                gemm(g.c_out, g.c_in, g.out_pixels(), weight, false, x, false, 1.0, o);
            } else {
                let mut cols = vec![0.0; g.patch_len() * g.out_pixels()];
                im2col(g, x, &mut cols);
                gemm(g.c_out, g.patch_len(), g.out_pixels(), weight, false, &cols, false, 1.0, o);
            }
        });
}

pub(crate) struct ConvGrads {
    pub input: Option<Vec<f64>>,
    pub weight: Option<Vec<f64>>,
    pub bias: Option<Vec<f64>>,
}

pub(crate) fn conv2d_backward(
    g: &ConvGeom,
    input: &[f64],
    weight: &[f64],
    grad_out: &[f64],
    need: (bool, bool, bool),
) -> ConvGrads {
    let (need_in, need_w, need_b) = need;
    let in_len = g.c_in * g.h * g.w;
    let out_len = g.c_out * g.out_pixels();
    let n = grad_out.len() / out_len;
    let p = g.out_pixels();
    let pk = g.patch_len();

    let grad_in = need_in.then(|| {
        let mut gi = vec![0.0; n * in_len];
        gi.par_chunks_mut(in_len)
            .zip(grad_out.par_chunks(out_len))
            .for_each(|(gx, go)| {
                if g.is_pointwise() {
                    gemm(g.c_in, g.c_out, p, weight, true, go, false, 0.0, gx);
                } else {
                    let mut dcols = vec![0.0; pk * p];
                    gemm(pk, g.c_out, p, weight, true, go, false, 0.0, &mut dcols);
                    col2im(g, &dcols, gx);
                }
            });
        gi
    });

    let grad_w = need_w.then(|| {
        let per_sample: Vec<Vec<f64>> = input
            .par_chunks(in_len)
            .zip(grad_out.par_chunks(out_len))
            .map(|(x, go)| {
                let mut gw = vec![0.0; g.c_out * pk];
                if g.is_pointwise() {
                    gemm(g.c_out, p, pk, go, false, x, true, 0.0, &mut gw);
                } else {
                    let mut cols = vec![0.0; pk * p];
                    im2col(g, x, &mut cols);
                    gemm(g.c_out, p, pk, go, false, &cols, true, 0.0, &mut gw);
                }
                gw
            })
            .collect();
        let mut total = vec![0.0; g.c_out * pk];
        for gw in per_sample {
            for (t, v) in total.iter_mut().zip(gw) {
                *t += v;
            }
        }
        total
    });

    let grad_b = need_b.then(|| {
        let mut gb = vec![0.0; g.c_out];
        for go in grad_out.chunks(out_len) {
            for (oc, row) in go.chunks(p).enumerate() {
                gb[oc] += row.iter().sum::<f64>();
            }
        }
        gb
    });

    ConvGrads {
        input: grad_in,
        weight: grad_w,
        bias: grad_b,
    }
}

/// Max pooling over `window × window` cells. Returns the pooled values and, for each,
/// the flat index of the winning input element (first maximum on ties).
pub(crate) fn maxpool_forward(
    dims: (usize, usize, usize, usize),
    window: usize,
    stride: usize,
    input: &[f64],
) -> (Vec<f64>, Vec<usize>, usize, usize) {
    let (n, c, h, w) = dims;
    let oh = (h - window) / stride + 1;
    let ow = (w - window) / stride + 1;
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut arg = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = base;
                for ky in 0..window {
                    for kx in 0..window {
                        let idx = base + (oy * stride + ky) * w + ox * stride + kx;
                        if input[idx] > best {
                            best = input[idx];
                            best_idx = idx;
                        }
                    }
                }
                out.push(best);
                arg.push(best_idx);
            }
        }
    }
    (out, arg, oh, ow)
}

/// Smallest gap between the winner and runner-up over all pooling windows.
pub(crate) fn maxpool_margin(
    dims: (usize, usize, usize, usize),
    window: usize,
    stride: usize,
    input: &[f64],
) -> f64 {
    let (n, c, h, w) = dims;
    let oh = (h - window) / stride + 1;
    let ow = (w - window) / stride + 1;
    let mut margin = f64::INFINITY;
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let (mut top, mut second) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
                for ky in 0..window {
                    for kx in 0..window {
                        let v = input[base + (oy * stride + ky) * w + ox * stride + kx];
                        if v > top {
                            second = top;
                            top = v;
                        } else if v > second {
                            second = v;
                        }
                    }
                }
                if window * window > 1 {
                    margin = margin.min(top - second);
                }
            }
        }
    }
    margin
}

/// Source taps for factor-2 bilinear upsampling along one axis (align-corners off).
pub(crate) fn up2_taps(n: usize) -> Vec<(usize, usize, f64)> {
    (0..2 * n)
        .map(|o| {
            let src = ((o as f64 + 0.5) / 2.0 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(n - 1);
            let i1 = (i0 + 1).min(n - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

pub(crate) fn up2_forward(dims: (usize, usize, usize, usize), input: &[f64]) -> Vec<f64> {
    let (n, c, h, w) = dims;
    let ty = up2_taps(h);
    let tx = up2_taps(w);
    let mut out = vec![0.0; n * c * 4 * h * w];
    out.par_chunks_mut(4 * h * w)
        .zip(input.par_chunks(h * w))
        .for_each(|(o, x)| {
            for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
                for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                    let top = x[y0 * w + x0] * (1.0 - lx) + x[y0 * w + x1] * lx;
                    let bot = x[y1 * w + x0] * (1.0 - lx) + x[y1 * w + x1] * lx;
                    o[oy * 2 * w + ox] = top * (1.0 - ly) + bot * ly;
                }
            }
        });
    out
}

pub(crate) fn up2_backward(dims: (usize, usize, usize, usize), grad_out: &[f64]) -> Vec<f64> {
    let (n, c, h, w) = dims;
    let ty = up2_taps(h);
    let tx = up2_taps(w);
    let mut gi = vec![0.0; n * c * h * w];
    gi.par_chunks_mut(h * w)
        .zip(grad_out.par_chunks(4 * h * w))
        .for_each(|(gx, go)| {
            for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
                for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                    let g = go[oy * 2 * w + ox];
                    gx[y0 * w + x0] += g * (1.0 - ly) * (1.0 - lx);
                    gx[y0 * w + x1] += g * (1.0 - ly) * lx;
                    gx[y1 * w + x0] += g * ly * (1.0 - lx);
                    gx[y1 * w + x1] += g * ly * lx;
                }
            }
        });
    gi
}

/// Per-channel mean and biased variance over the N, H, W axes.
pub(crate) fn channel_moments(dims: (usize, usize, usize, usize), x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let (n, c, h, w) = dims;
    let hw = h * w;
    let m = (n * hw) as f64;
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for ch in 0..c {
        let mut s = 0.0;
        for b in 0..n {
            s += x[(b * c + ch) * hw..(b * c + ch + 1) * hw].iter().sum::<f64>();
        }
        let mu = s / m;
        let mut ss = 0.0;
        for b in 0..n {
            ss += x[(b * c + ch) * hw..(b * c + ch + 1) * hw]
                .iter()
                .map(|v| (v - mu) * (v - mu))
                .sum::<f64>();
        }
        mean[ch] = mu;
        var[ch] = ss / m;
    }
    (mean, var)
}
