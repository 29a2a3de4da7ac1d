//! Slice-level forward/backward kernels behind the graph ops.
//!
//! Tensors are NCHW and row-major. Convolution is lowered to im2col + GEMM
//! one sample at a time; weight gradients are accumulated over the batch in
//! sample order so results do not depend on scheduling.

use crate::Element;

/// `c = a * b + beta * c` where `a` is `m x k` and `b` is `k x n`.
///
/// `a_trans` means `a` is stored as its `k x m` transpose, likewise `b_trans`.
#[allow(clippy::too_many_arguments)]
pub fn matmul<T: Element>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    a_trans: bool,
    b: &[T],
    b_trans: bool,
    beta: T,
    c: &mut [T],
) {
    matmul_strided(m, k, n, a, a_trans, b, b_trans, beta, c, (n as isize, 1));
}

/// [`matmul`] with explicit `(row, column)` strides for `c`.
#[allow(clippy::too_many_arguments)]
pub fn matmul_strided<T: Element>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    a_trans: bool,
    b: &[T],
    b_trans: bool,
    beta: T,
    c: &mut [T],
    (rsc, csc): (isize, isize),
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n, "matmul operand too short");
    assert!((rsc, csc) == (n as isize, 1) || (rsc, csc) == (1, m as isize), "unsupported output layout");
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: extents and strides describe row-major buffers whose lengths were checked above.
    unsafe {
        T::gemm_raw(m, k, n, T::one(), a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), rsc, csc)
    }
}

/// Output extent of a strided, padded window sweep.
pub fn conv_out_len(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if stride == 0 || kernel == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

#[derive(Clone, Copy, Debug)]
pub struct Window {
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
}

/// Range of output columns `ox` whose input column `ox * stride + kj - pad`
/// falls inside `0..w`.
fn valid_span(ow: usize, w: usize, kj: usize, stride: usize, pad: usize) -> (usize, usize) {
    // first ox with ox * stride + kj >= pad
    let lo = if kj >= pad { 0 } else { (pad - kj).div_ceil(stride) };
    // last ox with ox * stride + kj - pad < w
    let hi = if w + pad > kj { ((w + pad - kj - 1) / stride + 1).min(ow) } else { 0 };
    (lo.min(hi), hi)
}

/// Unfold one `c x h x w` image into a `(c*kh*kw) x (oh*ow)` column matrix.
pub fn im2col<T: Element>(x: &[T], c: usize, h: usize, w: usize, win: Window, cols: &mut [T]) {
    let oh = conv_out_len(h, win.kh, win.stride, win.pad).expect("window larger than input");
    let ow = conv_out_len(w, win.kw, win.stride, win.pad).expect("window larger than input");
    let p = oh * ow;
    let s = win.stride;
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ki in 0..win.kh {
            for kj in 0..win.kw {
                let row = ((ci * win.kh + ki) * win.kw + kj) * p;
                let dst = &mut cols[row..row + p];
                let (lo, hi) = valid_span(ow, w, kj, s, win.pad);
                for oy in 0..oh {
                    let iy = (oy * s + ki) as isize - win.pad as isize;
                    let line = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    line[..lo].fill(T::zero());
                    line[hi..].fill(T::zero());
                    if lo < hi {
                        let start = iy as usize * w + lo * s + kj - win.pad;
                        if s == 1 {
                            line[lo..hi].copy_from_slice(&plane[start..start + hi - lo]);
                        } else {
                            for (v, src) in line[lo..hi].iter_mut().zip(plane[start..].iter().step_by(s)) {
                                *v = *src;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add columns back into a `c x h x w` image.
pub fn col2im<T: Element>(cols: &[T], c: usize, h: usize, w: usize, win: Window, x: &mut [T]) {
    let oh = conv_out_len(h, win.kh, win.stride, win.pad).expect("window larger than input");
    let ow = conv_out_len(w, win.kw, win.stride, win.pad).expect("window larger than input");
    let p = oh * ow;
    let s = win.stride;
    for ci in 0..c {
        let plane = &mut x[ci * h * w..(ci + 1) * h * w];
        for ki in 0..win.kh {
            for kj in 0..win.kw {
                let row = ((ci * win.kh + ki) * win.kw + kj) * p;
                let src = &cols[row..row + p];
                let (lo, hi) = valid_span(ow, w, kj, s, win.pad);
                if lo >= hi {
                    continue;
                }
                for oy in 0..oh {
                    let iy = (oy * s + ki) as isize - win.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let start = iy as usize * w + lo * s + kj - win.pad;
                    let line = &src[oy * ow + lo..oy * ow + hi];
                    if s == 1 {
                        for (d, &v) in plane[start..start + hi - lo].iter_mut().zip(line) {
                            *d += v;
                        }
                    } else {
                        for (d, &v) in plane[start..].iter_mut().step_by(s).zip(line) {
                            *d += v;
                        }
                    }
                }
            }
        }
    }
}

fn is_pointwise(win: Window) -> bool {
    win.kh == 1 && win.kw == 1 && win.stride == 1 && win.pad == 0
}

/// Cross-correlation of `x [n,ci,h,w]` with `weight [co,ci,kh,kw]` plus bias.
pub fn conv2d_forward<T: Element>(
    x: &[T],
    [n, ci, h, w]: [usize; 4],
    weight: &[T],
    co: usize,
    bias: &[T],
    win: Window,
) -> (Vec<T>, [usize; 4]) {
    let oh = conv_out_len(h, win.kh, win.stride, win.pad).expect("window larger than input");
    let ow = conv_out_len(w, win.kw, win.stride, win.pad).expect("window larger than input");
    let k = ci * win.kh * win.kw;
    let p = oh * ow;
    let mut out = vec![T::zero(); n * co * p];
    let mut cols = if is_pointwise(win) { Vec::new() } else { vec![T::zero(); k * p] };
    for s in 0..n {
        let xs = &x[s * ci * h * w..(s + 1) * ci * h * w];
        let os = &mut out[s * co * p..(s + 1) * co * p];
        for (c, row) in os.chunks_mut(p).enumerate() {
            row.fill(bias[c]);
        }
        let cols_ref: &[T] = if is_pointwise(win) {
            xs
        } else {
            im2col(xs, ci, h, w, win, &mut cols);
            &cols
        };
        if co < 32 && p >= 256 {
            // computed as out^T = cols^T * W^T, written through transposed strides
            matmul_strided(p, k, co, cols_ref, true, weight, true, T::one(), os, (1, p as isize));
        } else {
            matmul(co, k, p, weight, false, cols_ref, false, T::one(), os);
        }
    }
    (out, [n, co, oh, ow])
}

pub struct ConvGrads<T> {
    pub input: Option<Vec<T>>,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

pub fn conv2d_backward<T: Element>(
    x: &[T],
    [n, ci, h, w]: [usize; 4],
    weight: &[T],
    co: usize,
    win: Window,
    grad_out: &[T],
    need_input: bool,
) -> ConvGrads<T> {
    let oh = conv_out_len(h, win.kh, win.stride, win.pad).expect("window larger than input");
    let ow = conv_out_len(w, win.kw, win.stride, win.pad).expect("window larger than input");
    let k = ci * win.kh * win.kw;
    let p = oh * ow;
    let mut gw = vec![T::zero(); co * k];
    let mut gb = vec![T::zero(); co];
    let mut gx = need_input.then(|| vec![T::zero(); x.len()]);
    let pointwise = is_pointwise(win);
    let mut cols = if pointwise { Vec::new() } else { vec![T::zero(); k * p] };
    let mut gcols = vec![T::zero(); if need_input && !pointwise { k * p } else { 0 }];
    for s in 0..n {
        let xs = &x[s * ci * h * w..(s + 1) * ci * h * w];
        let gs = &grad_out[s * co * p..(s + 1) * co * p];
        for (c, row) in gs.chunks(p).enumerate() {
            gb[c] += row.iter().copied().sum::<T>();
        }
        let cols_ref: &[T] = if pointwise {
            xs
        } else {
            im2col(xs, ci, h, w, win, &mut cols);
            &cols
        };
        matmul(co, p, k, gs, false, cols_ref, true, T::one(), &mut gw);
        if let Some(gx) = gx.as_mut() {
            let gxs = &mut gx[s * ci * h * w..(s + 1) * ci * h * w];
            if pointwise {
                matmul(k, co, p, weight, true, gs, false, T::one(), gxs);
            } else {
                matmul(k, co, p, weight, true, gs, false, T::zero(), &mut gcols);
                col2im(&gcols, ci, h, w, win, gxs);
            }
        }
    }
    ConvGrads { input: gx, weight: gw, bias: gb }
}

/// Output spatial size of an unpadded transposed convolution.
pub fn conv_transpose_out_len(input: usize, kernel: usize, stride: usize) -> usize {
    (input - 1) * stride + kernel
}

/// Transposed convolution of `x [n,ci,h,w]` with `weight [ci,co,kh,kw]`.
pub fn conv_transpose2d_forward<T: Element>(
    x: &[T],
    [n, ci, h, w]: [usize; 4],
    weight: &[T],
    co: usize,
    bias: &[T],
    win: Window,
) -> (Vec<T>, [usize; 4]) {
    let oh = conv_transpose_out_len(h, win.kh, win.stride);
    let ow = conv_transpose_out_len(w, win.kw, win.stride);
    let k = co * win.kh * win.kw;
    let p = h * w;
    let mut out = vec![T::zero(); n * co * oh * ow];
    let mut cols = vec![T::zero(); k * p];
    for s in 0..n {
        let xs = &x[s * ci * p..(s + 1) * ci * p];
        let os = &mut out[s * co * oh * ow..(s + 1) * co * oh * ow];
        for (c, plane) in os.chunks_mut(oh * ow).enumerate() {
            plane.fill(bias[c]);
        }
        matmul(k, ci, p, weight, true, xs, false, T::zero(), &mut cols);
        col2im(&cols, co, oh, ow, win, os);
    }
    (out, [n, co, oh, ow])
}

pub fn conv_transpose2d_backward<T: Element>(
    x: &[T],
    [n, ci, h, w]: [usize; 4],
    weight: &[T],
    co: usize,
    win: Window,
    grad_out: &[T],
    need_input: bool,
) -> ConvGrads<T> {
    let oh = conv_transpose_out_len(h, win.kh, win.stride);
    let ow = conv_transpose_out_len(w, win.kw, win.stride);
    let k = co * win.kh * win.kw;
    let p = h * w;
    let mut gw = vec![T::zero(); ci * k];
    let mut gb = vec![T::zero(); co];
    let mut gx = need_input.then(|| vec![T::zero(); x.len()]);
    let mut gcols = vec![T::zero(); k * p];
    for s in 0..n {
        let xs = &x[s * ci * p..(s + 1) * ci * p];
        let gs = &grad_out[s * co * oh * ow..(s + 1) * co * oh * ow];
        for (c, plane) in gs.chunks(oh * ow).enumerate() {
            gb[c] += plane.iter().copied().sum::<T>();
        }
        im2col(gs, co, oh, ow, win, &mut gcols);
        matmul(ci, p, k, xs, false, &gcols, true, T::one(), &mut gw);
        if let Some(gx) = gx.as_mut() {
            matmul(ci, k, p, weight, false, &gcols, false, T::zero(), &mut gx[s * ci * p..(s + 1) * ci * p]);
        }
    }
    ConvGrads { input: gx, weight: gw, bias: gb }
}

/// Max pooling without padding; returns outputs and flat argmax positions.
pub fn max_pool2d_forward<T: Element>(
    x: &[T],
    [n, c, h, w]: [usize; 4],
    kernel: usize,
    stride: usize,
) -> (Vec<T>, Vec<usize>, [usize; 4]) {
    let oh = conv_out_len(h, kernel, stride, 0).expect("pool window larger than input");
    let ow = conv_out_len(w, kernel, stride, 0).expect("pool window larger than input");
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut arg = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + oy * stride * w + ox * stride;
                for ky in 0..kernel {
                    let row = base + (oy * stride + ky) * w + ox * stride;
                    for idx in row..row + kernel {
                        // first maximum wins on ties
                        if x[idx] > x[best] {
                            best = idx;
                        }
                    }
                }
                out.push(x[best]);
                arg.push(best);
            }
        }
    }
    (out, arg, [n, c, oh, ow])
}

fn adaptive_bin(i: usize, input: usize, output: usize) -> (usize, usize) {
    let start = i * input / output;
    let end = ((i + 1) * input).div_ceil(output);
    (start, end)
}

/// Average pooling onto a fixed `oh x ow` grid; bins cover the input exactly.
pub fn adaptive_avg_pool2d_forward<T: Element>(x: &[T], [n, c, h, w]: [usize; 4], oh: usize, ow: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for plane in x.chunks(h * w).take(n * c) {
        for oy in 0..oh {
            let (y0, y1) = adaptive_bin(oy, h, oh);
            for ox in 0..ow {
                let (x0, x1) = adaptive_bin(ox, w, ow);
                let mut acc = T::zero();
                for y in y0..y1 {
                    for v in &plane[y * w + x0..y * w + x1] {
                        acc += *v;
                    }
                }
                out.push(acc / T::from_f64(((y1 - y0) * (x1 - x0)) as f64));
            }
        }
    }
    out
}

pub fn adaptive_avg_pool2d_backward<T: Element>(
    grad_out: &[T],
    [n, c, h, w]: [usize; 4],
    oh: usize,
    ow: usize,
) -> Vec<T> {
    let mut gx = vec![T::zero(); n * c * h * w];
    for (plane, gplane) in gx.chunks_mut(h * w).zip(grad_out.chunks(oh * ow)) {
        for oy in 0..oh {
            let (y0, y1) = adaptive_bin(oy, h, oh);
            for ox in 0..ow {
                let (x0, x1) = adaptive_bin(ox, w, ow);
                let share = gplane[oy * ow + ox] / T::from_f64(((y1 - y0) * (x1 - x0)) as f64);
                for y in y0..y1 {
                    for v in &mut plane[y * w + x0..y * w + x1] {
                        *v += share;
                    }
                }
            }
        }
    }
    gx
}

/// Bilinear resampling of one `h x w` plane with half-pixel centers.
pub fn bilinear_resize<T: Element>(src: &[T], h: usize, w: usize, oh: usize, ow: usize) -> Vec<T> {
    let sy = h as f64 / oh as f64;
    let sx = w as f64 / ow as f64;
    let coord = |dst: usize, scale: f64, len: usize| -> (usize, usize, T) {
        let pos = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64);
        let i0 = pos.floor() as usize;
        let i1 = (i0 + 1).min(len - 1);
        (i0, i1, T::from_f64(pos - i0 as f64))
    };
    let cols: Vec<_> = (0..ow).map(|x| coord(x, sx, w)).collect();
    let mut out = Vec::with_capacity(oh * ow);
    for y in 0..oh {
        let (y0, y1, fy) = coord(y, sy, h);
        for &(x0, x1, fx) in &cols {
            let top = lerp(src[y0 * w + x0], src[y0 * w + x1], fx);
            let bottom = lerp(src[y1 * w + x0], src[y1 * w + x1], fx);
            out.push(lerp(top, bottom, fy));
        }
    }
    out
}

/// `a + (b - a) * t`, exact when `a == b`.
pub fn lerp<T: Element>(a: T, b: T, t: T) -> T {
    a + (b - a) * t
}
