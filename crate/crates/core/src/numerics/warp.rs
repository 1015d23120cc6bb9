//! Bilinear pull-warping with edge replication, and its analytic adjoint.
//!
//! `warp(I, V)[p] = I(p + V[p])`. Sample coordinates outside the image are
//! handled by clamping the integer taps, which replicates border pixels and
//! gives a zero flow derivative outside `[0, n-1]`. At integer sample
//! coordinates the flow derivative is the average of the left and right
//! slopes of the piecewise-linear interpolant.


use super::frame::{FlowField, Frame, Tensor};
use crate::error::invalid;
use crate::Result;

/// Integer floor for sample coordinates, which stay far inside the `i64`
/// range because flows are bounded by the frame size.
#[inline]
fn floor(s: f64) -> i64 {
    let k = s as i64;
    if (k as f64) > s {
        k - 1
    } else {
        k
    }
}

/// Taps along one axis: indices `k-1, k, k+1` (clamped), interpolation
/// weights and derivative weights for each.
#[derive(Debug, Clone, Copy)]
struct Axis {
    idx: [usize; 3],
    weight: [f64; 3],
    dweight: [f64; 3],
}

#[inline]
fn axis(s: f64, n: usize) -> Axis {
    let last = n as i64 - 1;
    let k = floor(s);
    let f = s - k as f64;
    let clamp = |i: i64| i.clamp(0, last) as usize;
    let idx = [clamp(k - 1), clamp(k), clamp(k + 1)];
    let weight = [0.0, 1.0 - f, f];
    let dweight = if f == 0.0 {
        [-0.5, 0.0, 0.5]
    } else {
        [0.0, -1.0, 1.0]
    };
    Axis {
        idx,
        weight,
        dweight,
    }
}

/// Bilinear sample of one `h × w` plane at `(sx, sy)` with edge replication.
#[inline(always)]
pub(crate) fn sample(plane: &[f64], h: usize, w: usize, sx: f64, sy: f64) -> f64 {
    let (x0, x1, fx) = taps(sx, w);
    let (y0, y1, fy) = taps(sy, h);
    let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
    let bot = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
    top * (1.0 - fy) + bot * fy
}

#[inline]
fn taps(s: f64, n: usize) -> (usize, usize, f64) {
    let k = floor(s);
    let f = s - k as f64;
    let last = n as i64 - 1;
    (k.clamp(0, last) as usize, (k + 1).clamp(0, last) as usize, f)
}

/// Warps every plane of `src` (`channels × h × w`) by the flow planes.
pub(crate) fn warp_planes(src: &Tensor, dx: &[f64], dy: &[f64]) -> Tensor {
    let (c, h, w) = src.shape();
    let mut out = Tensor::zeros(c, h, w);
    let n = h * w;
    for ch in 0..c {
        let plane = &src.data[ch * n..(ch + 1) * n];
        let dst = &mut out.data[ch * n..(ch + 1) * n];
        for y in 0..h {
            for x in 0..w {
                let p = y * w + x;
                dst[p] = sample(plane, h, w, x as f64 + dx[p], y as f64 + dy[p]);
            }
        }
    }
    out
}

/// Accumulates the adjoint of [`warp_planes`] into the given buffers.
pub(crate) fn warp_planes_backward(
    src: &Tensor,
    dx: &[f64],
    dy: &[f64],
    grad_out: &Tensor,
    mut grad_src: Option<&mut Tensor>,
    mut grad_flow: Option<(&mut [f64], &mut [f64])>,
) {
    let (c, h, w) = src.shape();
    let n = h * w;
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            let ax = axis(x as f64 + dx[p], w);
            let ay = axis(y as f64 + dy[p], h);
            let mut gdx = 0.0;
            let mut gdy = 0.0;
            for ch in 0..c {
                let g = grad_out.data[ch * n + p];
                if g == 0.0 {
                    continue;
                }
                if let Some(gs) = grad_src.as_deref_mut() {
                    let gp = &mut gs.data[ch * n..(ch + 1) * n];
                    for j in 1..3 {
                        for i in 1..3 {
                            gp[ay.idx[j] * w + ax.idx[i]] += g * ay.weight[j] * ax.weight[i];
                        }
                    }
                }
                if grad_flow.is_some() {
                    let plane = &src.data[ch * n..(ch + 1) * n];
                    let mut sx = 0.0;
                    let mut sy = 0.0;
                    for j in 0..3 {
                        for i in 0..3 {
                            let v = plane[ay.idx[j] * w + ax.idx[i]];
                            sx += ay.weight[j] * ax.dweight[i] * v;
                            sy += ay.dweight[j] * ax.weight[i] * v;
                        }
                    }
                    gdx += g * sx;
                    gdy += g * sy;
                }
            }
            if let Some((gx, gy)) = grad_flow.as_mut() {
                gx[p] += gdx;
                gy[p] += gdy;
            }
        }
    }
}

fn check_dims(image: &Frame, flow: &FlowField) -> Result<()> {
    if image.height() != flow.height || image.width() != flow.width {
        return Err(invalid!(
            "image is {}x{}, flow is {}x{}",
            image.height(),
            image.width(),
            flow.height,
            flow.width
        ));
    }
    Ok(())
}

/// Pull-samples `image` at `p + flow[p]` with bilinear interpolation.
pub fn warp(image: &Frame, flow: &FlowField) -> Result<Frame> {
    check_dims(image, flow)?;
    Frame::from_tensor(warp_planes(image.as_tensor(), &flow.dx, &flow.dy))
}

/// Gradients of `warp` with respect to the source pixels and the flow.
pub fn warp_backward(image: &Frame, flow: &FlowField, grad_out: &Tensor) -> Result<(Tensor, FlowField)> {
    check_dims(image, flow)?;
    if grad_out.shape() != image.as_tensor().shape() {
        return Err(invalid!("grad_out shape does not match the warped image"));
    }
    let mut grad_image = Tensor::zeros(image.channels(), image.height(), image.width());
    let mut grad_flow = FlowField::zeros(flow.height, flow.width);
    warp_planes_backward(
        image.as_tensor(),
        &flow.dx,
        &flow.dy,
        grad_out,
        Some(&mut grad_image),
        Some((&mut grad_flow.dx, &mut grad_flow.dy)),
    );
    Ok((grad_image, grad_flow))
}
