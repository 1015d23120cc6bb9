//! Direct 2-D convolution kernels (NCHW with batch 1) and bilinear resizing.
//!
//! Weights use the usual layouts: `[cout, cin, k, k]` for convolution and
//! `[cin, cout, k, k]` for transposed convolution, stored flat in a
//! [`Tensor`] whose channel count is `cout * cin`.

use super::frame::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeometry {
    pub fn conv_out(&self, n: usize) -> usize {
        (n + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn transposed_out(&self, n: usize) -> usize {
        (n - 1) * self.stride + self.kernel - 2 * self.pad
    }
}

/// Output coordinates `o < count` whose tap `k` lands inside `0..n`, with
/// the input coordinate of the first one.
#[inline]
fn span(k: usize, g: &ConvGeometry, n: usize, count: usize) -> (core::ops::Range<usize>, usize) {
    let s = g.stride;
    let lo = if k >= g.pad { 0 } else { (g.pad - k).div_ceil(s) };
    let hi = if n + g.pad > k { ((n - 1 + g.pad - k) / s + 1).min(count) } else { 0 };
    if lo >= hi {
        return (0..0, 0);
    }
    (lo..hi, lo * s + k - g.pad)
}

pub fn conv2d(x: &Tensor, weight: &Tensor, bias: &Tensor, g: &ConvGeometry) -> Tensor {
    let (h, w) = (x.height, x.width);
    let (oh, ow) = (g.conv_out(h), g.conv_out(w));
    let (k, s) = (g.kernel, g.stride);
    let mut out = Tensor::zeros(g.cout, oh, ow);
    for co in 0..g.cout {
        let op = &mut out.data[co * oh * ow..(co + 1) * oh * ow];
        op.iter_mut().for_each(|v| *v = bias.data[co]);
        for ci in 0..g.cin {
            let xp = &x.data[ci * h * w..(ci + 1) * h * w];
            let wk = &weight.data[(co * g.cin + ci) * k * k..(co * g.cin + ci + 1) * k * k];
            for ky in 0..k {
                let (rows, iy0) = span(ky, g, h, oh);
                for (j, oy) in rows.enumerate() {
                    let xrow = &xp[(iy0 + j * s) * w..(iy0 + j * s + 1) * w];
                    let orow = &mut op[oy * ow..(oy + 1) * ow];
                    for kx in 0..k {
                        let wv = wk[ky * k + kx];
                        let (cols, ix0) = span(kx, g, w, ow);
                        for (o, &xv) in orow[cols].iter_mut().zip(xrow[ix0..].iter().step_by(s)) {
                            *o += wv * xv;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of [`conv2d`]; each output gradient is accumulated when present.
pub fn conv2d_backward(
    x: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
    g: &ConvGeometry,
    grad_x: Option<&mut Tensor>,
    grad_w: Option<&mut Tensor>,
    grad_b: Option<&mut Tensor>,
) {
    let (h, w) = (x.height, x.width);
    let (oh, ow) = (grad_out.height, grad_out.width);
    let (k, s) = (g.kernel, g.stride);
    if let Some(gb) = grad_b {
        for co in 0..g.cout {
            gb.data[co] += grad_out.data[co * oh * ow..(co + 1) * oh * ow].iter().sum::<f64>();
        }
    }
    let mut grad_x = grad_x;
    let mut grad_w = grad_w;
    for co in 0..g.cout {
        let gp = &grad_out.data[co * oh * ow..(co + 1) * oh * ow];
        for ci in 0..g.cin {
            let widx = (co * g.cin + ci) * k * k;
            let xp = &x.data[ci * h * w..(ci + 1) * h * w];
            for ky in 0..k {
                let (rows, iy0) = span(ky, g, h, oh);
                for (j, oy) in rows.enumerate() {
                    let iy = iy0 + j * s;
                    let grow = &gp[oy * ow..(oy + 1) * ow];
                    for kx in 0..k {
                        let (cols, ix0) = span(kx, g, w, ow);
                        let grow = &grow[cols];
                        if let Some(gw) = grad_w.as_deref_mut() {
                            let xrow = xp[iy * w + ix0..(iy + 1) * w].iter().step_by(s);
                            gw.data[widx + ky * k + kx] += grow.iter().zip(xrow).map(|(a, b)| a * b).sum::<f64>();
                        }
                        if let Some(gx) = grad_x.as_deref_mut() {
                            let wv = weight.data[widx + ky * k + kx];
                            let xrow = gx.data[ci * h * w + iy * w + ix0..ci * h * w + (iy + 1) * w].iter_mut().step_by(s);
                            for (d, &gv) in xrow.zip(grow) {
                                *d += gv * wv;
                            }
                        }
                    }
                }
            }
        }
    }
}

pub fn conv_transpose2d(x: &Tensor, weight: &Tensor, bias: &Tensor, g: &ConvGeometry) -> Tensor {
    let (h, w) = (x.height, x.width);
    let (oh, ow) = (g.transposed_out(h), g.transposed_out(w));
    let (k, s) = (g.kernel, g.stride);
    // out[o] += w * x[i] where o = i * stride + k - pad, i.e. the same
    // tap relation as conv2d with the roles of input and output swapped.
    // Columns are accumulated split by `ox % stride`, so that consecutive
    // input columns land on consecutive entries of one phase buffer.
    let wq = ow.div_ceil(s);
    let mut phases = alloc::vec![0.0; s * oh * wq];
    let mut out = Tensor::zeros(g.cout, oh, ow);
    for co in 0..g.cout {
        phases.iter_mut().for_each(|v| *v = bias.data[co]);
        for ci in 0..g.cin {
            let xp = &x.data[ci * h * w..(ci + 1) * h * w];
            let wk = &weight.data[(ci * g.cout + co) * k * k..(ci * g.cout + co + 1) * k * k];
            for kx in 0..k {
                let r = kx as isize - g.pad as isize;
                let px = r.rem_euclid(s as isize) as usize;
                let shift = (r - px as isize) / s as isize;
                let width = (ow - px.min(ow)).div_ceil(s);
                let lo = (-shift).max(0) as usize;
                let hi = (width as isize - shift).clamp(0, w as isize) as usize;
                if lo >= hi {
                    continue;
                }
                let j0 = (lo as isize + shift) as usize;
                for ky in 0..k {
                    let wv = wk[ky * k + kx];
                    let (rows, oy0) = span(ky, g, oh, h);
                    for (j, iy) in rows.enumerate() {
                        let oy = oy0 + j * s;
                        let dst = &mut phases[(px * oh + oy) * wq + j0..][..hi - lo];
                        for (d, &xv) in dst.iter_mut().zip(&xp[iy * w + lo..iy * w + hi]) {
                            *d += wv * xv;
                        }
                    }
                }
            }
        }
        let op = &mut out.data[co * oh * ow..(co + 1) * oh * ow];
        for oy in 0..oh {
            for (ox, o) in op[oy * ow..(oy + 1) * ow].iter_mut().enumerate() {
                *o = phases[((ox % s) * oh + oy) * wq + ox / s];
            }
        }
    }
    out
}

pub fn conv_transpose2d_backward(
    x: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
    g: &ConvGeometry,
    grad_x: Option<&mut Tensor>,
    grad_w: Option<&mut Tensor>,
    grad_b: Option<&mut Tensor>,
) {
    let (h, w) = (x.height, x.width);
    let (oh, ow) = (grad_out.height, grad_out.width);
    let (k, s) = (g.kernel, g.stride);
    if let Some(gb) = grad_b {
        for co in 0..g.cout {
            gb.data[co] += grad_out.data[co * oh * ow..(co + 1) * oh * ow].iter().sum::<f64>();
        }
    }
    let mut grad_x = grad_x;
    let mut grad_w = grad_w;
    for ci in 0..g.cin {
        let xp = &x.data[ci * h * w..(ci + 1) * h * w];
        for co in 0..g.cout {
            let widx = (ci * g.cout + co) * k * k;
            let gp = &grad_out.data[co * oh * ow..(co + 1) * oh * ow];
            for ky in 0..k {
                let (rows, oy0) = span(ky, g, oh, h);
                for (j, iy) in rows.enumerate() {
                    let oy = oy0 + j * s;
                    for kx in 0..k {
                        let (cols, ox0) = span(kx, g, ow, w);
                        let grow = gp[oy * ow + ox0..(oy + 1) * ow].iter().step_by(s);
                        if let Some(gw) = grad_w.as_deref_mut() {
                            let xrow = &xp[iy * w..(iy + 1) * w][cols.clone()];
                            gw.data[widx + ky * k + kx] += grow.clone().zip(xrow).map(|(a, b)| a * b).sum::<f64>();
                        }
                        if let Some(gx) = grad_x.as_deref_mut() {
                            let wv = weight.data[widx + ky * k + kx];
                            let dst = &mut gx.data[ci * h * w + iy * w..ci * h * w + (iy + 1) * w][cols];
                            for (d, &gv) in dst.iter_mut().zip(grow) {
                                *d += gv * wv;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Source coordinate and weight pairs for align-corners=false bilinear resizing.
fn resize_taps(n_in: usize, n_out: usize) -> alloc::vec::Vec<(usize, usize, f64)> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let s = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
            let i0 = s as usize;
            let i1 = (i0 + 1).min(n_in - 1);
            (i0, i1, s - i0 as f64)
        })
        .collect()
}

/// Bilinear resize of every plane (half-pixel centers, clamped at borders).
pub fn resize_bilinear(x: &Tensor, oh: usize, ow: usize) -> Tensor {
    let (c, h, w) = x.shape();
    let ty = resize_taps(h, oh);
    let tx = resize_taps(w, ow);
    let mut out = Tensor::zeros(c, oh, ow);
    for ch in 0..c {
        let xp = x.plane(ch);
        let op = out.plane_mut(ch);
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let top = xp[y0 * w + x0] * (1.0 - fx) + xp[y0 * w + x1] * fx;
                let bot = xp[y1 * w + x0] * (1.0 - fx) + xp[y1 * w + x1] * fx;
                op[oy * ow + ox] = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    out
}

pub fn resize_bilinear_backward(grad_out: &Tensor, h: usize, w: usize, grad_x: &mut Tensor) {
    let (c, oh, ow) = grad_out.shape();
    let ty = resize_taps(h, oh);
    let tx = resize_taps(w, ow);
    for ch in 0..c {
        let gp = grad_out.plane(ch);
        let gx = grad_x.plane_mut(ch);
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let g = gp[oy * ow + ox];
                gx[y0 * w + x0] += g * (1.0 - fy) * (1.0 - fx);
                gx[y0 * w + x1] += g * (1.0 - fy) * fx;
                gx[y1 * w + x0] += g * fy * (1.0 - fx);
                gx[y1 * w + x1] += g * fy * fx;
            }
        }
    }
}
