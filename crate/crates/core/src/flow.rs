//! Dense optical flow: a coarse-to-fine Horn–Schunck estimator and access to
//! the exact motion recorded by synthetic scenes.

use alloc::vec;
use alloc::vec::Vec;

use crate::bench::Sequence;
use crate::error::invalid;
use crate::numerics::conv::resize_bilinear;
use crate::numerics::{warp_planes, FlowField, Frame, Tensor};
use crate::tracker::RegionTransform;
use crate::{Error, Result};

/// Smallest frame side accepted by the estimator (and by each pyramid level).
pub const MIN_FLOW_SIDE: usize = 8;
/// Relinearizations per pyramid level.
const WARPS_PER_LEVEL: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowConfig {
    pub smoothness_alpha: f64,
    pub iterations: usize,
    pub pyramid_levels: usize,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            smoothness_alpha: 10.0,
            iterations: 100,
            pyramid_levels: 1,
        }
    }
}

/// Largest pyramid depth usable on `height × width` frames.
pub fn max_pyramid_levels(height: usize, width: usize) -> usize {
    let side = height.min(width) / MIN_FLOW_SIDE;
    if side == 0 {
        0
    } else {
        (usize::BITS - 1 - side.leading_zeros()) as usize
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.smoothness_alpha > 0.0) || !self.smoothness_alpha.is_finite() {
            return Err(Error::InvalidConfig(alloc::format!(
                "smoothness_alpha must be positive, got {}",
                self.smoothness_alpha
            )));
        }
        if self.iterations == 0 || self.pyramid_levels == 0 {
            return Err(Error::InvalidConfig("iterations and pyramid_levels must be positive".into()));
        }
        Ok(())
    }

    /// Validates against a concrete frame size as well.
    pub fn validate_for(&self, height: usize, width: usize) -> Result<()> {
        self.validate()?;
        let cap = max_pyramid_levels(height, width).max(1);
        if self.pyramid_levels > cap {
            return Err(Error::InvalidConfig(alloc::format!(
                "pyramid_levels {} exceeds {} for {}x{} frames",
                self.pyramid_levels,
                cap,
                width,
                height
            )));
        }
        Ok(())
    }
}

/// Grayscale plane scaled to 0..255 so the default smoothness weight keeps
/// its usual meaning.
fn intensity(frame: &Frame) -> Tensor {
    let mut t = frame.to_gray().into_tensor();
    t.data.iter_mut().for_each(|v| *v *= 255.0);
    t
}

/// Separable `[1 2 1] / 4` smoothing with replicated borders.
fn binomial(t: &Tensor) -> Tensor {
    let (h, w) = (t.height, t.width);
    let mut tmp = Tensor::zeros(1, h, w);
    for y in 0..h {
        for x in 0..w {
            let l = t.data[y * w + x.saturating_sub(1)];
            let r = t.data[y * w + (x + 1).min(w - 1)];
            tmp.data[y * w + x] = 0.25 * l + 0.5 * t.data[y * w + x] + 0.25 * r;
        }
    }
    let mut out = Tensor::zeros(1, h, w);
    for y in 0..h {
        for x in 0..w {
            let u = tmp.data[y.saturating_sub(1) * w + x];
            let d = tmp.data[(y + 1).min(h - 1) * w + x];
            out.data[y * w + x] = 0.25 * u + 0.5 * tmp.data[y * w + x] + 0.25 * d;
        }
    }
    out
}

fn downsample(t: &Tensor) -> Tensor {
    let s = binomial(t);
    resize_bilinear(&s, t.height / 2, t.width / 2)
}

/// Horn–Schunck neighbourhood average (weights 1/6 edge, 1/12 corner).
fn neighbour_mean(u: &[f64], w: usize, h: usize, out: &mut [f64]) {
    for y in 0..h {
        let yu = y.saturating_sub(1);
        let yd = (y + 1).min(h - 1);
        for x in 0..w {
            let xl = x.saturating_sub(1);
            let xr = (x + 1).min(w - 1);
            let edge = u[yu * w + x] + u[yd * w + x] + u[y * w + xl] + u[y * w + xr];
            let corner = u[yu * w + xl] + u[yu * w + xr] + u[yd * w + xl] + u[yd * w + xr];
            out[y * w + x] = edge / 6.0 + corner / 12.0;
        }
    }
}

fn gradients(t: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let (h, w) = (t.height, t.width);
    let mut gx = vec![0.0; h * w];
    let mut gy = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let xl = x.saturating_sub(1);
            let xr = (x + 1).min(w - 1);
            let yu = y.saturating_sub(1);
            let yd = (y + 1).min(h - 1);
            let sx = (xr - xl).max(1) as f64;
            let sy = (yd - yu).max(1) as f64;
            gx[y * w + x] = (t.data[y * w + xr] - t.data[y * w + xl]) / sx;
            gy[y * w + x] = (t.data[yd * w + x] - t.data[yu * w + x]) / sy;
        }
    }
    (gx, gy)
}

/// Refines `(u, v)` at one pyramid level.
fn refine(prev: &Tensor, cur: &Tensor, u: &mut [f64], v: &mut [f64], config: &FlowConfig) {
    let (h, w) = (prev.height, prev.width);
    let a2 = config.smoothness_alpha * config.smoothness_alpha;
    let mut ubar = vec![0.0; h * w];
    let mut vbar = vec![0.0; h * w];
    for _ in 0..WARPS_PER_LEVEL {
        let u0 = u.to_vec();
        let v0 = v.to_vec();
        let warped = warp_planes(cur, &u0, &v0);
        let mut avg = warped.clone();
        for (a, p) in avg.data.iter_mut().zip(&prev.data) {
            *a = 0.5 * (*a + p);
        }
        let (ix, iy) = gradients(&avg);
        let it: Vec<f64> = warped.data.iter().zip(&prev.data).map(|(a, b)| a - b).collect();
        for _ in 0..config.iterations {
            neighbour_mean(u, w, h, &mut ubar);
            neighbour_mean(v, w, h, &mut vbar);
            for i in 0..h * w {
                let r = ix[i] * (ubar[i] - u0[i]) + iy[i] * (vbar[i] - v0[i]) + it[i];
                let k = r / (a2 + ix[i] * ix[i] + iy[i] * iy[i]);
                u[i] = ubar[i] - ix[i] * k;
                v[i] = vbar[i] - iy[i] * k;
            }
        }
    }
}

/// Displacement field from `prev` toward `cur`, so that
/// `warp(cur, flow) ≈ prev`.
pub fn estimate_flow(prev: &Frame, cur: &Frame, config: &FlowConfig) -> Result<FlowField> {
    if prev.height() != cur.height() || prev.width() != cur.width() {
        return Err(invalid!(
            "frame sizes differ: {}x{} vs {}x{}",
            prev.width(),
            prev.height(),
            cur.width(),
            cur.height()
        ));
    }
    let (h, w) = (prev.height(), prev.width());
    if h < MIN_FLOW_SIDE || w < MIN_FLOW_SIDE {
        return Err(invalid!("flow needs frames of at least 8x8, got {w}x{h}"));
    }
    config.validate_for(h, w)?;

    let mut pyramid = vec![(binomial(&intensity(prev)), binomial(&intensity(cur)))];
    for _ in 1..config.pyramid_levels {
        let (p, c) = pyramid.last().expect("non-empty");
        let next = (downsample(p), downsample(c));
        pyramid.push(next);
    }

    let mut flow: Option<Tensor> = None;
    for (p, c) in pyramid.iter().rev() {
        let (lh, lw) = (p.height, p.width);
        let (mut u, mut v) = match &flow {
            None => (vec![0.0; lh * lw], vec![0.0; lh * lw]),
            Some(coarse) => {
                let up = resize_bilinear(coarse, lh, lw);
                let sx = lw as f64 / coarse.width as f64;
                let sy = lh as f64 / coarse.height as f64;
                (
                    up.plane(0).iter().map(|d| d * sx).collect(),
                    up.plane(1).iter().map(|d| d * sy).collect(),
                )
            }
        };
        refine(p, c, &mut u, &mut v, config);
        let mut t = Tensor::zeros(2, lh, lw);
        t.plane_mut(0).copy_from_slice(&u);
        t.plane_mut(1).copy_from_slice(&v);
        flow = Some(t);
    }
    let t = flow.expect("at least one level");
    let bound = w.max(h) as f64;
    let clip = |d: &[f64]| d.iter().map(|v| v.clamp(-bound, bound)).collect::<Vec<_>>();
    FlowField::new(h, w, clip(t.plane(0)), clip(t.plane(1)))
}

/// Exact motion from frame `frame_index - 1` to `frame_index` of a synthetic
/// sequence.
pub fn ground_truth_flow(sequence: &Sequence, frame_index: usize) -> Result<FlowField> {
    let flows = sequence
        .gt_flow
        .as_ref()
        .ok_or_else(|| Error::Unavailable(alloc::format!("sequence '{}' has no ground-truth flow", sequence.name)))?;
    if frame_index == 0 {
        return Err(Error::Unavailable("frame 0 has no predecessor".into()));
    }
    flows
        .get(frame_index - 1)
        .cloned()
        .ok_or_else(|| invalid!("frame index {frame_index} out of range"))
}

/// Crops a flow field with the same geometry as a search region crop.
pub fn crop_flow(flow: &FlowField, transform: RegionTransform, width: usize, height: usize) -> FlowField {
    let (fw, fh) = (flow.width as i64, flow.height as i64);
    let mut dx = Vec::with_capacity(width * height);
    let mut dy = Vec::with_capacity(width * height);
    for v in 0..height as i64 {
        let y = (transform.y0 + v).clamp(0, fh - 1) as usize;
        for u in 0..width as i64 {
            let x = (transform.x0 + u).clamp(0, fw - 1) as usize;
            dx.push(flow.dx[y * flow.width + x]);
            dy.push(flow.dy[y * flow.width + x]);
        }
    }
    FlowField {
        height,
        width,
        dx,
        dy,
    }
}
