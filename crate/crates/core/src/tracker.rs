//! Normalized cross-correlation template tracker.
//!
//! The template is cut from the first frame and never updated. Tracking a
//! frame means cropping a square search region around the previous box,
//! correlating the template against every valid position, and taking the
//! row-major-first argmax. The response is differentiable with respect to
//! the region pixels, which is what the white-box attacks need.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use crate::error::invalid;
use crate::numerics::{CustomOp, Frame, Tape, Tensor, Var, LUMA};
use crate::{Error, Result};

/// Added under the square root of every window's energy.
pub const NCC_EPS: f64 = 1e-8;
/// Added under the square root of the gradient magnitude feature.
const GRAD_EPS: f64 = 1e-6;
/// Default search-region side as a multiple of the larger box side.
pub const DEFAULT_CONTEXT: f64 = 2.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FeatureKind {
    #[default]
    Intensity,
    GradientMagnitude,
}

/// Axis-aligned box, center / size form, in frame pixel coordinates where
/// pixel `x` spans `[x, x + 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        if !(w > 0.0 && h > 0.0) || !cx.is_finite() || !cy.is_finite() || !w.is_finite() || !h.is_finite() {
            return Err(invalid!("invalid box ({cx}, {cy}, {w}, {h})"));
        }
        Ok(BBox { cx, cy, w, h })
    }

    pub fn from_top_left(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        Self::new(x + w / 2.0, y + h / 2.0, w, h)
    }

    pub fn left(&self) -> f64 {
        self.cx - self.w / 2.0
    }

    pub fn top(&self) -> f64 {
        self.cy - self.h / 2.0
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        let ix = (self.left() + self.w).min(other.left() + other.w) - self.left().max(other.left());
        let iy = (self.top() + self.h).min(other.top() + other.h) - self.top().max(other.top());
        if ix <= 0.0 || iy <= 0.0 {
            return 0.0;
        }
        let inter = ix * iy;
        inter / (self.w * self.h + other.w * other.h - inter)
    }

    pub fn center_distance(&self, other: &BBox) -> f64 {
        Float::hypot(self.cx - other.cx, self.cy - other.cy)
    }

    fn inside(&self, width: usize, height: usize) -> bool {
        self.left() >= -1e-9
            && self.top() >= -1e-9
            && self.left() + self.w <= width as f64 + 1e-9
            && self.top() + self.h <= height as f64 + 1e-9
    }
}

/// Integer offset of a cropped region: region pixel `(u, v)` is frame pixel
/// `(x0 + u, y0 + v)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RegionTransform {
    pub x0: i64,
    pub y0: i64,
}

impl RegionTransform {
    pub fn to_frame(&self, u: f64, v: f64) -> (f64, f64) {
        (self.x0 as f64 + u, self.y0 as f64 + v)
    }
}

/// Correlation scores over a search region.
///
/// Cell `(row, col)` corresponds to a box whose center in frame coordinates
/// is `(origin_x + col, origin_y + row)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseMap {
    pub values: Tensor,
    pub origin_x: f64,
    pub origin_y: f64,
    pub box_w: f64,
    pub box_h: f64,
    pub frame_w: usize,
    pub frame_h: usize,
}

impl ResponseMap {
    pub fn height(&self) -> usize {
        self.values.height
    }

    pub fn width(&self) -> usize {
        self.values.width
    }

    /// Row-major-first argmax as `(row, col)`.
    pub fn argmax(&self) -> (usize, usize) {
        argmax(&self.values)
    }

    pub fn cell_center(&self, row: f64, col: f64) -> (f64, f64) {
        (self.origin_x + col, self.origin_y + row)
    }
}

pub(crate) fn argmax(t: &Tensor) -> (usize, usize) {
    let mut best = 0;
    for (i, &v) in t.data.iter().enumerate() {
        if v > t.data[best] {
            best = i;
        }
    }
    (best / t.width, best % t.width)
}

/// Immutable tracking model: a zero-mean, unit-norm feature template.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackerModel {
    template: Tensor,
    kind: FeatureKind,
    box_w: f64,
    box_h: f64,
}

impl TrackerModel {
    pub fn kind(&self) -> FeatureKind {
        self.kind
    }

    /// Normalized template (zero mean, unit Euclidean norm).
    pub fn template(&self) -> &Tensor {
        &self.template
    }

    pub fn template_size(&self) -> (usize, usize) {
        (self.template.width, self.template.height)
    }

    pub fn box_size(&self) -> (f64, f64) {
        (self.box_w, self.box_h)
    }
}

fn round_i(v: f64) -> i64 {
    Float::round(v) as i64
}

/// Crops `w × h` pixels starting at `(x0, y0)`, replicating edges.
pub fn crop(frame: &Frame, x0: i64, y0: i64, w: usize, h: usize) -> Frame {
    let (fw, fh) = (frame.width() as i64, frame.height() as i64);
    let c = frame.channels();
    let mut data = Vec::with_capacity(c * w * h);
    for ch in 0..c {
        let plane = frame.plane(ch);
        for v in 0..h as i64 {
            let y = (y0 + v).clamp(0, fh - 1) as usize;
            for u in 0..w as i64 {
                let x = (x0 + u).clamp(0, fw - 1) as usize;
                data.push(plane[y * fw as usize + x]);
            }
        }
    }
    Frame::new(c, h, w, data).expect("crop preserves finiteness")
}

/// Grayscale conversion as a tensor (identity for one channel).
fn gray(t: &Tensor) -> Tensor {
    if t.channels == 1 {
        return t.clone();
    }
    let n = t.plane_len();
    let mut out = Tensor::zeros(1, t.height, t.width);
    for ch in 0..3 {
        for (o, v) in out.data.iter_mut().zip(&t.data[ch * n..(ch + 1) * n]) {
            *o += LUMA[ch] * v;
        }
    }
    out
}

fn gray_backward(channels: usize, g: &Tensor) -> Tensor {
    if channels == 1 {
        return g.clone();
    }
    let mut out = Tensor::zeros(3, g.height, g.width);
    for ch in 0..3 {
        for (o, v) in out.plane_mut(ch).iter_mut().zip(&g.data) {
            *o = LUMA[ch] * v;
        }
    }
    out
}

#[inline]
fn central_diffs(p: &[f64], w: usize, h: usize, x: usize, y: usize) -> (f64, f64, [usize; 4]) {
    let xl = x.saturating_sub(1);
    let xr = (x + 1).min(w - 1);
    let yu = y.saturating_sub(1);
    let yd = (y + 1).min(h - 1);
    let gx = 0.5 * (p[y * w + xr] - p[y * w + xl]);
    let gy = 0.5 * (p[yd * w + x] - p[yu * w + x]);
    (gx, gy, [y * w + xl, y * w + xr, yu * w + x, yd * w + x])
}

/// Feature planes the correlation runs on (always a single plane).
pub fn features(kind: FeatureKind, image: &Tensor) -> Tensor {
    let g = gray(image);
    match kind {
        FeatureKind::Intensity => g,
        FeatureKind::GradientMagnitude => {
            let (w, h) = (g.width, g.height);
            let mut out = Tensor::zeros(1, h, w);
            for y in 0..h {
                for x in 0..w {
                    let (gx, gy, _) = central_diffs(&g.data, w, h, x, y);
                    out.data[y * w + x] = Float::sqrt(gx * gx + gy * gy + GRAD_EPS);
                }
            }
            out
        }
    }
}

fn features_backward(kind: FeatureKind, image: &Tensor, grad_feat: &Tensor) -> Tensor {
    let g_gray = match kind {
        FeatureKind::Intensity => grad_feat.clone(),
        FeatureKind::GradientMagnitude => {
            let g = gray(image);
            let (w, h) = (g.width, g.height);
            let mut out = Tensor::zeros(1, h, w);
            for y in 0..h {
                for x in 0..w {
                    let up = grad_feat.data[y * w + x];
                    if up == 0.0 {
                        continue;
                    }
                    let (gx, gy, [xl, xr, yu, yd]) = central_diffs(&g.data, w, h, x, y);
                    let mag = Float::sqrt(gx * gx + gy * gy + GRAD_EPS);
                    let kx = up * gx / mag * 0.5;
                    let ky = up * gy / mag * 0.5;
                    out.data[xr] += kx;
                    out.data[xl] -= kx;
                    out.data[yd] += ky;
                    out.data[yu] -= ky;
                }
            }
            out
        }
    };
    gray_backward(image.channels, &g_gray)
}

/// Builds the tracking model from the first frame and its ground-truth box.
pub fn init(frame: &Frame, bbox: &BBox, kind: FeatureKind) -> Result<TrackerModel> {
    if !bbox.inside(frame.width(), frame.height()) {
        return Err(invalid!("box {:?} is not inside the {}x{} frame", bbox, frame.width(), frame.height()));
    }
    if bbox.w * bbox.h < 16.0 {
        return Err(invalid!("box area {} is below 16 px²", bbox.w * bbox.h));
    }
    let tw = round_i(bbox.w).max(1) as usize;
    let th = round_i(bbox.h).max(1) as usize;
    let feat = features(kind, frame.as_tensor());
    let feat_frame = Frame::from_tensor(feat)?;
    let x0 = round_i(bbox.cx - tw as f64 / 2.0);
    let y0 = round_i(bbox.cy - th as f64 / 2.0);
    let patch = crop(&feat_frame, x0, y0, tw, th).into_tensor();
    let n = patch.len() as f64;
    let mean = patch.sum() / n;
    let var = patch.data.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    if var <= 1e-8 {
        return Err(Error::DegenerateTemplate(alloc::format!("template variance {var:.3e}")));
    }
    let norm = Float::sqrt(var * n);
    let mut template = patch;
    template.data.iter_mut().for_each(|v| *v = (*v - mean) / norm);
    Ok(TrackerModel {
        template,
        kind,
        box_w: bbox.w,
        box_h: bbox.h,
    })
}

/// Square crop of side `round(context · max(w, h))` centered on the box.
pub fn crop_search_region(frame: &Frame, prev_bbox: &BBox, context: f64) -> Result<(Frame, RegionTransform)> {
    if !(context >= 1.5) {
        return Err(invalid!("search context must be at least 1.5, got {context}"));
    }
    let side = round_i(context * prev_bbox.w.max(prev_bbox.h)).max(1) as usize;
    let x0 = round_i(prev_bbox.cx - side as f64 / 2.0);
    let y0 = round_i(prev_bbox.cy - side as f64 / 2.0);
    Ok((crop(frame, x0, y0, side, side), RegionTransform { x0, y0 }))
}

/// Pastes a region back into a copy of `frame`, skipping replicated borders.
pub fn paste_region(frame: &Frame, region: &Frame, tr: RegionTransform) -> Frame {
    let mut t = frame.as_tensor().clone();
    let (fw, fh) = (frame.width() as i64, frame.height() as i64);
    for c in 0..frame.channels() {
        for v in 0..region.height() {
            let y = tr.y0 + v as i64;
            if !(0..fh).contains(&y) {
                continue;
            }
            for u in 0..region.width() {
                let x = tr.x0 + u as i64;
                if (0..fw).contains(&x) {
                    *t.at_mut(c, y as usize, x as usize) = region.at(c, v, u);
                }
            }
        }
    }
    Frame::from_tensor(t).expect("pasting keeps values finite")
}

/// Dense NCC of the normalized template over all valid positions of `feat`.
fn ncc(template: &Tensor, feat: &Tensor) -> Tensor {
    let (tw, th) = (template.width, template.height);
    let (w, h) = (feat.width, feat.height);
    let (ow, oh) = (w - tw + 1, h - th + 1);
    let n = (tw * th) as f64;
    let (sum, sq) = integral_images(feat);
    let mut out = Tensor::zeros(1, oh, ow);
    for r in 0..oh {
        for c in 0..ow {
            let s = box_sum(&sum, w + 1, c, r, tw, th);
            let s2 = box_sum(&sq, w + 1, c, r, tw, th);
            let energy = (s2 - s * s / n).max(0.0);
            let mut dot = 0.0;
            for y in 0..th {
                let frow = &feat.data[(r + y) * w + c..(r + y) * w + c + tw];
                let trow = &template.data[y * tw..(y + 1) * tw];
                dot += frow.iter().zip(trow).map(|(a, b)| a * b).sum::<f64>();
            }
            out.data[r * ow + c] = dot / Float::sqrt(energy + NCC_EPS);
        }
    }
    out
}

fn ncc_backward(template: &Tensor, feat: &Tensor, grad_out: &Tensor) -> Tensor {
    let (tw, th) = (template.width, template.height);
    let w = feat.width;
    let (oh, ow) = (grad_out.height, grad_out.width);
    let n = (tw * th) as f64;
    let mut g = Tensor::zeros(1, feat.height, w);
    for r in 0..oh {
        for c in 0..ow {
            let up = grad_out.data[r * ow + c];
            if up == 0.0 {
                continue;
            }
            let mut s = 0.0;
            let mut s2 = 0.0;
            let mut dot = 0.0;
            for y in 0..th {
                for x in 0..tw {
                    let v = feat.data[(r + y) * w + c + x];
                    s += v;
                    s2 += v * v;
                    dot += v * template.data[y * tw + x];
                }
            }
            let mean = s / n;
            let b = Float::sqrt((s2 - s * s / n).max(0.0) + NCC_EPS);
            let k1 = up / b;
            let k2 = up * dot / (b * b * b);
            for y in 0..th {
                for x in 0..tw {
                    let i = (r + y) * w + c + x;
                    g.data[i] += k1 * template.data[y * tw + x] - k2 * (feat.data[i] - mean);
                }
            }
        }
    }
    g
}

fn integral_images(f: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let (w, h) = (f.width, f.height);
    let mut s = vec![0.0; (w + 1) * (h + 1)];
    let mut q = vec![0.0; (w + 1) * (h + 1)];
    for y in 0..h {
        let mut rs = 0.0;
        let mut rq = 0.0;
        for x in 0..w {
            let v = f.data[y * w + x];
            rs += v;
            rq += v * v;
            s[(y + 1) * (w + 1) + x + 1] = s[y * (w + 1) + x + 1] + rs;
            q[(y + 1) * (w + 1) + x + 1] = q[y * (w + 1) + x + 1] + rq;
        }
    }
    (s, q)
}

#[inline]
fn box_sum(ii: &[f64], stride: usize, x: usize, y: usize, w: usize, h: usize) -> f64 {
    ii[(y + h) * stride + x + w] - ii[y * stride + x + w] - ii[(y + h) * stride + x] + ii[y * stride + x]
}

fn check_region(model: &TrackerModel, region: &Tensor) -> Result<()> {
    let (tw, th) = model.template_size();
    if region.width < tw || region.height < th {
        return Err(invalid!(
            "region {}x{} is smaller than the {}x{} template",
            region.width,
            region.height,
            tw,
            th
        ));
    }
    if region.channels != 1 && region.channels != 3 {
        return Err(invalid!("regions have 1 or 3 channels"));
    }
    Ok(())
}

/// Raw response values of `model` over a region (no geometry attached).
pub fn response_values(model: &TrackerModel, region: &Tensor) -> Result<Tensor> {
    check_region(model, region)?;
    Ok(ncc(&model.template, &features(model.kind, region)))
}

/// Response map of `model` over a search region cropped from a frame of
/// size `frame_w × frame_h`.
pub fn respond(
    model: &TrackerModel,
    region: &Frame,
    transform: RegionTransform,
    frame_w: usize,
    frame_h: usize,
) -> Result<ResponseMap> {
    let values = response_values(model, region.as_tensor())?;
    let (tw, th) = model.template_size();
    let (ox, oy) = transform.to_frame(tw as f64 / 2.0, th as f64 / 2.0);
    Ok(ResponseMap {
        values,
        origin_x: ox,
        origin_y: oy,
        box_w: model.box_w,
        box_h: model.box_h,
        frame_w,
        frame_h,
    })
}

/// Gradient of `Σ grad_map ⊙ response` with respect to the region pixels.
pub fn respond_backward(model: &TrackerModel, region: &Tensor, grad_map: &Tensor) -> Result<Tensor> {
    check_region(model, region)?;
    let (tw, th) = model.template_size();
    if grad_map.shape() != (1, region.height - th + 1, region.width - tw + 1) {
        return Err(invalid!("grad_map shape {:?} does not match the response", grad_map.shape()));
    }
    let feat = features(model.kind, region);
    let gf = ncc_backward(&model.template, &feat, grad_map);
    Ok(features_backward(model.kind, region, &gf))
}

/// Box at the response argmax; size comes from the model and the center is
/// clamped so the box stays inside the frame.
pub fn locate(map: &ResponseMap) -> BBox {
    let (r, c) = map.argmax();
    let (cx, cy) = map.cell_center(r as f64, c as f64);
    let clamp = |v: f64, half: f64, extent: usize| {
        let hi = extent as f64 - half;
        if hi < half {
            extent as f64 / 2.0
        } else {
            v.clamp(half, hi)
        }
    };
    BBox {
        cx: clamp(cx, map.box_w / 2.0, map.frame_w),
        cy: clamp(cy, map.box_h / 2.0, map.frame_h),
        w: map.box_w,
        h: map.box_h,
    }
}

/// Correlation response as a tape primitive.
struct NccResponse {
    model: TrackerModel,
}

impl CustomOp for NccResponse {
    fn name(&self) -> &'static str {
        "ncc_response"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        response_values(&self.model, inputs[0])
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad_output: &Tensor) -> Vec<Tensor> {
        let g = respond_backward(&self.model, inputs[0], grad_output).expect("shapes validated in forward");
        vec![g]
    }
}

/// Records the model's response to `region` on a tape.
pub fn respond_on_tape(tape: &mut Tape, model: &TrackerModel, region: Var) -> Result<Var> {
    tape.custom(&[region], Box::new(NccResponse { model: model.clone() }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::grad_check;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Frame {
        Frame::new(1, h, w, (0..h * w).map(|_| rng.gen()).collect()).unwrap()
    }

    fn paste(dst: &mut Frame, src: &Frame, x0: usize, y0: usize) {
        let mut t = dst.clone().into_tensor();
        for y in 0..src.height() {
            for x in 0..src.width() {
                *t.at_mut(0, y0 + y, x0 + x) = src.at(0, y, x);
            }
        }
        *dst = Frame::from_tensor(t).unwrap();
    }

    fn model_from_patch(patch: &Frame) -> TrackerModel {
        let (w, h) = (patch.width() as f64, patch.height() as f64);
        init(patch, &BBox::from_top_left(0.0, 0.0, w, h).unwrap(), FeatureKind::Intensity).unwrap()
    }

    #[test]
    fn init_extracts_template() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let frame = noise(&mut rng, 64, 64);
        let m = init(&frame, &BBox::new(32.0, 32.0, 16.0, 16.0).unwrap(), FeatureKind::Intensity).unwrap();
        assert_eq!(m.template_size(), (16, 16));
        assert!(m.template().sum().abs() < 1e-9);
        let norm: f64 = m.template().data.iter().map(|v| v * v).sum();
        assert!((norm - 1.0).abs() < 1e-9);
    }

    #[test]
    fn constant_box_is_degenerate() {
        let frame = Frame::filled(1, 64, 64, 0.4).unwrap();
        let err = init(&frame, &BBox::new(32.0, 32.0, 16.0, 16.0).unwrap(), FeatureKind::Intensity).unwrap_err();
        assert!(matches!(err, Error::DegenerateTemplate(_)));
    }

    #[test]
    fn init_preconditions() {
        let frame = Frame::filled(1, 64, 64, 0.4).unwrap();
        assert!(init(&frame, &BBox::new(2.0, 2.0, 16.0, 16.0).unwrap(), FeatureKind::Intensity).is_err());
        assert!(init(&frame, &BBox::new(32.0, 32.0, 3.0, 3.0).unwrap(), FeatureKind::Intensity).is_err());
    }

    #[test]
    fn feature_variants_differ() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let frame = noise(&mut rng, 64, 64);
        let b = BBox::new(32.0, 32.0, 16.0, 16.0).unwrap();
        let a = init(&frame, &b, FeatureKind::Intensity).unwrap();
        let g = init(&frame, &b, FeatureKind::GradientMagnitude).unwrap();
        let d: f64 = a.template().data.iter().zip(&g.template().data).map(|(x, y)| (x - y) * (x - y)).sum();
        assert!(d > 1e-3);
    }

    #[test]
    fn crop_geometry() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let frame = noise(&mut rng, 64, 64);
        let b = BBox::new(32.0, 32.0, 16.0, 16.0).unwrap();
        let (region, tr) = crop_search_region(&frame, &b, 2.5).unwrap();
        assert_eq!((region.width(), region.height()), (40, 40));
        assert_eq!(tr.to_frame(20.0, 20.0), (32.0, 32.0));
        assert_eq!(region.at(0, 0, 0), frame.at(0, 12, 12));

        let corner = BBox::new(4.0, 4.0, 16.0, 16.0).unwrap();
        let (region, tr) = crop_search_region(&frame, &corner, 2.5).unwrap();
        assert_eq!((region.width(), region.height()), (40, 40));
        assert_eq!(region.at(0, 0, 0), frame.at(0, 0, 0));
        assert_eq!(region.at(0, 0, 5), frame.at(0, 0, 0));
        assert_eq!(tr.x0, -16);

        // round trip through the response geometry
        let m = init(&frame, &b, FeatureKind::Intensity).unwrap();
        let (region, tr) = crop_search_region(&frame, &b, 2.5).unwrap();
        let map = respond(&m, &region, tr, 64, 64).unwrap();
        assert_eq!(map.cell_center(12.0, 12.0), (32.0, 32.0));
        assert!(crop_search_region(&frame, &b, 1.0).is_err());
    }

    #[test]
    fn exact_copy_is_found() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let patch = noise(&mut rng, 8, 8);
        let mut region = noise(&mut rng, 24, 24);
        paste(&mut region, &patch, 11, 5);
        let m = model_from_patch(&patch);
        let v = response_values(&m, region.as_tensor()).unwrap();
        assert_eq!(argmax(&v), (5, 11));
        assert!(v.at(0, 5, 11) > 0.99);

        let own = response_values(&m, patch.as_tensor()).unwrap();
        assert_eq!(own.shape(), (1, 1, 1));
        assert!((own.data[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn ties_resolve_row_major() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let patch = noise(&mut rng, 8, 8);
        let mut region = noise(&mut rng, 24, 24);
        paste(&mut region, &patch, 14, 2);
        paste(&mut region, &patch, 1, 13);
        let m = model_from_patch(&patch);
        let v = response_values(&m, region.as_tensor()).unwrap();
        assert_eq!(argmax(&v), (2, 14));
    }

    fn map_with(values: Tensor) -> ResponseMap {
        ResponseMap {
            values,
            origin_x: 20.0,
            origin_y: 30.0,
            box_w: 8.0,
            box_h: 8.0,
            frame_w: 64,
            frame_h: 64,
        }
    }

    #[test]
    fn locate_rules() {
        let mut t = Tensor::zeros(1, 9, 9);
        *t.at_mut(0, 3, 5) = 1.0;
        let b = locate(&map_with(t));
        assert_eq!((b.cx, b.cy), (25.0, 33.0));
        let b = locate(&map_with(Tensor::filled(1, 9, 9, 0.2)));
        assert_eq!((b.cx, b.cy), (20.0, 30.0));
        let mut t = Tensor::zeros(1, 9, 9);
        *t.at_mut(0, 0, 0) = 1.0;
        let mut m = map_with(t);
        m.origin_x = -3.0;
        m.origin_y = 70.0;
        let b = locate(&m);
        assert_eq!((b.cx, b.cy), (4.0, 60.0));
    }

    #[test]
    fn backward_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for kind in [FeatureKind::Intensity, FeatureKind::GradientMagnitude] {
            let patch_src = noise(&mut rng, 16, 16);
            let m = init(&patch_src, &BBox::new(8.0, 8.0, 8.0, 8.0).unwrap(), kind).unwrap();
            let region = noise(&mut rng, 24, 24);
            let weights = Tensor::from_vec(1, 17, 17, (0..289).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
            let g = respond_backward(&m, region.as_tensor(), &weights).unwrap();
            let f = |x: &[f64]| {
                let t = Tensor::from_vec(1, 24, 24, x.to_vec()).unwrap();
                let v = response_values(&m, &t)?;
                Ok(v.data.iter().zip(&weights.data).map(|(a, b)| a * b).sum())
            };
            let err = grad_check(f, region.data(), &g.data, 1e-5).unwrap();
            assert!(err < 1e-3, "{kind:?}: relative error {err}");
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let patch = noise(&mut rng, 8, 8);
        let m = model_from_patch(&patch);
        let region = noise(&mut rng, 20, 20);
        let g = respond_backward(&m, region.as_tensor(), &Tensor::zeros(1, 13, 13)).unwrap();
        assert!(g.data.iter().all(|&v| v == 0.0));
        assert!(respond_backward(&m, region.as_tensor(), &Tensor::zeros(1, 12, 13)).is_err());
    }

    #[test]
    fn peak_is_stationary_along_affine_directions() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let patch = noise(&mut rng, 8, 8);
        let m = model_from_patch(&patch);
        let mut region = noise(&mut rng, 16, 16);
        paste(&mut region, &patch, 4, 4);
        let mut up = Tensor::zeros(1, 9, 9);
        *up.at_mut(0, 4, 4) = 1.0;
        let g = respond_backward(&m, region.as_tensor(), &up).unwrap();
        // directional derivatives along the template itself and a constant
        // shift of the window, both of which leave NCC unchanged
        let mut along_t = 0.0;
        let mut along_1 = 0.0;
        for y in 0..8 {
            for x in 0..8 {
                let gv = g.at(0, 4 + y, 4 + x);
                along_t += gv * m.template().at(0, y, x);
                along_1 += gv;
            }
        }
        assert!(along_t.abs() < 1e-6, "{along_t}");
        assert!(along_1.abs() < 1e-6, "{along_1}");
        // confirm with finite differences along the template direction
        let eps = 1e-3;
        let probe = |k: f64| {
            let mut t = region.as_tensor().clone();
            for y in 0..8 {
                for x in 0..8 {
                    *t.at_mut(0, 4 + y, 4 + x) += k * m.template().at(0, y, x);
                }
            }
            response_values(&m, &t).unwrap().at(0, 4, 4)
        };
        assert!(((probe(eps) - probe(-eps)) / (2.0 * eps)).abs() < 1e-6);
    }

    #[test]
    fn affine_intensity_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let patch = noise(&mut rng, 8, 8);
        let m = model_from_patch(&patch);
        let region = noise(&mut rng, 20, 20);
        let base = response_values(&m, region.as_tensor()).unwrap();
        for (a, b) in [(0.5, -0.1), (2.0, 0.1), (1.3, 0.05)] {
            let mut t = region.as_tensor().clone();
            t.data.iter_mut().for_each(|v| *v = a * *v + b);
            let r = response_values(&m, &t).unwrap();
            assert!(r.max_abs_diff(&base) < 1e-5);
        }
    }

    #[test]
    fn taped_response_matches_direct() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let patch = noise(&mut rng, 8, 8);
        let m = model_from_patch(&patch);
        let region = noise(&mut rng, 20, 20);
        let mut tape = Tape::new();
        let r = tape.param(region.as_tensor().clone());
        let out = respond_on_tape(&mut tape, &m, r).unwrap();
        let loss = tape.sum(out);
        let g = tape.backward(loss).unwrap().get(&tape, r);
        let direct = respond_backward(&m, region.as_tensor(), &Tensor::filled(1, 13, 13, 1.0)).unwrap();
        assert!(g.max_abs_diff(&direct) < 1e-12);
    }

    #[test]
    fn iou_and_distance() {
        let a = BBox::from_top_left(0.0, 0.0, 10.0, 10.0).unwrap();
        assert_eq!(a.iou(&a), 1.0);
        let b = BBox::from_top_left(5.0, 0.0, 10.0, 10.0).unwrap();
        assert!((a.iou(&b) - 50.0 / 150.0).abs() < 1e-12);
        let c = BBox::from_top_left(20.0, 0.0, 10.0, 10.0).unwrap();
        assert_eq!(a.iou(&c), 0.0);
        assert_eq!(a.center_distance(&b), 5.0);
    }
}
