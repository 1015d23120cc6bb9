//! Flow-guided motion-blur synthesis.
//!
//! The optical flow `U` between the previous and current frame is split into
//! `N-1` sub-motions by per-pixel ratio planes `W`. Instant `i` (0-based,
//! `0..N`) sits at the cumulative fraction `C_i = (Σ_{j<i} W_j) ⊙ U` of the
//! motion; it is the average of the previous frame pulled back by `C_i` and
//! the current frame pulled forward by the remaining flow
//! `R_i = (Σ_{j≥i} W_j) ⊙ U`. The blurred frame is the per-pixel convex
//! combination of the `N` instants with accumulation weights `A`.

use alloc::vec::Vec;

use crate::error::invalid;
use crate::numerics::{sample, FlowField, Frame, Tape, Tensor, Var};
use crate::Result;

/// How the ratio planes turn into cumulative flow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SubMotion {
    /// `C_i = (Σ_{j<i} W_j) ⊙ U`, so `C_N = U` whenever the ratios sum to one.
    #[default]
    Cumulative,
    /// `C_i = (Σ_{j<i} W_j ⊙ W_j) ⊙ U`, the product of the ratio with the
    /// already-scaled sub-motion. Kept for comparison only.
    Squared,
}

/// Per-pixel sub-motion ratios, `N-1` planes.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionRatios(pub Tensor);

/// Per-pixel accumulation weights, `N` planes shared by all colour channels.
#[derive(Debug, Clone, PartialEq)]
pub struct AccumWeights(pub Tensor);

#[derive(Debug, Clone, PartialEq)]
pub struct BlurParams {
    pub ratios: MotionRatios,
    pub accum: AccumWeights,
}

/// Default number of instant images.
pub const DEFAULT_INSTANTS: usize = 17;

/// Tolerance on the per-pixel unit-sum constraint for valid parameters.
pub const SUM_TOLERANCE: f64 = 1e-5;

impl BlurParams {
    pub fn new(ratios: MotionRatios, accum: AccumWeights) -> Result<Self> {
        let (rc, rh, rw) = ratios.0.shape();
        let (ac, ah, aw) = accum.0.shape();
        if ac < 2 || rc + 1 != ac || (rh, rw) != (ah, aw) {
            return Err(invalid!(
                "ratios {:?} and accumulation weights {:?} are inconsistent",
                ratios.0.shape(),
                accum.0.shape()
            ));
        }
        Ok(BlurParams { ratios, accum })
    }

    pub fn n_instants(&self) -> usize {
        self.accum.0.channels
    }

    pub fn height(&self) -> usize {
        self.accum.0.height
    }

    pub fn width(&self) -> usize {
        self.accum.0.width
    }

    /// Largest deviation from the constraints: elements outside `[0,1]` or
    /// per-pixel sums away from one, over both stacks.
    pub fn constraint_violation(&self) -> f64 {
        stack_violation(&self.ratios.0).max(stack_violation(&self.accum.0))
    }

    pub fn check_constraints(&self, tol: f64) -> Result<()> {
        let v = self.constraint_violation();
        if v > tol {
            return Err(invalid!("blur parameters violate their constraints by {v:.3e}"));
        }
        Ok(())
    }
}

fn stack_violation(t: &Tensor) -> f64 {
    let n = t.plane_len();
    let mut worst: f64 = 0.0;
    for p in 0..n {
        let mut sum = 0.0;
        for c in 0..t.channels {
            let v = t.data[c * n + p];
            worst = worst.max(-v).max(v - 1.0);
            sum += v;
        }
        worst = worst.max((sum - 1.0).abs());
    }
    worst
}

/// Uniform ratios `1/(N-1)` and accumulation weights `1/N`.
pub fn uniform_params(n: usize, height: usize, width: usize) -> Result<BlurParams> {
    if n < 2 {
        return Err(invalid!("need at least 2 instants, got {n}"));
    }
    Ok(BlurParams {
        ratios: MotionRatios(Tensor::filled(n - 1, height, width, 1.0 / (n - 1) as f64)),
        accum: AccumWeights(Tensor::filled(n, height, width, 1.0 / n as f64)),
    })
}

fn check_flow(flow: &FlowField, h: usize, w: usize) -> Result<()> {
    if flow.height != h || flow.width != w {
        return Err(invalid!("flow is {}x{}, expected {}x{}", flow.height, flow.width, h, w));
    }
    Ok(())
}

/// Per-instant fractions of the full motion: `(prefix, suffix)` with
/// `prefix[i] = Σ_{j<i} W_j` and `suffix[i] = Σ_{j≥i} W_j`, each `N` planes.
fn ratio_sums(ratios: &Tensor, mode: SubMotion) -> (Tensor, Tensor) {
    let (c, h, w) = ratios.shape();
    let n = h * w;
    let term = |i: usize, p: usize| {
        let v = ratios.data[i * n + p];
        match mode {
            SubMotion::Cumulative => v,
            SubMotion::Squared => v * v,
        }
    };
    let mut prefix = Tensor::zeros(c + 1, h, w);
    let mut suffix = Tensor::zeros(c + 1, h, w);
    for i in 1..=c {
        for p in 0..n {
            prefix.data[i * n + p] = prefix.data[(i - 1) * n + p] + term(i - 1, p);
        }
    }
    for i in (0..c).rev() {
        for p in 0..n {
            suffix.data[i * n + p] = suffix.data[(i + 1) * n + p] + term(i, p);
        }
    }
    (prefix, suffix)
}

fn scaled_flow(frac: &[f64], flow: &FlowField) -> FlowField {
    FlowField {
        height: flow.height,
        width: flow.width,
        dx: frac.iter().zip(&flow.dx).map(|(f, u)| f * u).collect(),
        dy: frac.iter().zip(&flow.dy).map(|(f, u)| f * u).collect(),
    }
}

/// Cumulative flows `C_1..C_N` (from `t-1` to each instant) and remaining
/// flows `R_1..R_N` (from each instant to `t`).
pub fn cumulative_flows(flow: &FlowField, ratios: &MotionRatios) -> Result<(Vec<FlowField>, Vec<FlowField>)> {
    cumulative_flows_with(flow, ratios, SubMotion::Cumulative)
}

pub fn cumulative_flows_with(
    flow: &FlowField,
    ratios: &MotionRatios,
    mode: SubMotion,
) -> Result<(Vec<FlowField>, Vec<FlowField>)> {
    check_flow(flow, ratios.0.height, ratios.0.width)?;
    let (prefix, suffix) = ratio_sums(&ratios.0, mode);
    let n = prefix.channels;
    let c = (0..n).map(|i| scaled_flow(prefix.plane(i), flow)).collect();
    let r = (0..n).map(|i| scaled_flow(suffix.plane(i), flow)).collect();
    Ok((c, r))
}

fn check_frames(prev: &Frame, cur: &Frame) -> Result<()> {
    if !prev.same_dims(cur) {
        return Err(invalid!("previous and current frames differ in shape"));
    }
    Ok(())
}

/// The `N` instant images between `prev` and `cur`.
pub fn instant_images(prev: &Frame, cur: &Frame, flow: &FlowField, ratios: &MotionRatios) -> Result<Vec<Frame>> {
    instant_images_with(prev, cur, flow, ratios, SubMotion::Cumulative)
}

pub fn instant_images_with(
    prev: &Frame,
    cur: &Frame,
    flow: &FlowField,
    ratios: &MotionRatios,
    mode: SubMotion,
) -> Result<Vec<Frame>> {
    check_frames(prev, cur)?;
    check_flow(flow, prev.height(), prev.width())?;
    if ratios.0.height != prev.height() || ratios.0.width != prev.width() {
        return Err(invalid!("ratio planes do not match the frame size"));
    }
    let (prefix, suffix) = ratio_sums(&ratios.0, mode);
    let (c, h, w) = prev.as_tensor().shape();
    let np = h * w;
    let mut out = Vec::with_capacity(prefix.channels);
    for i in 0..prefix.channels {
        let (back, fwd) = (prefix.plane(i), suffix.plane(i));
        let mut t = Tensor::zeros(c, h, w);
        for ch in 0..c {
            let a = &prev.data()[ch * np..(ch + 1) * np];
            let b = &cur.data()[ch * np..(ch + 1) * np];
            let dst = &mut t.data[ch * np..(ch + 1) * np];
            for y in 0..h {
                for x in 0..w {
                    let p = y * w + x;
                    let (u, v) = (flow.dx[p], flow.dy[p]);
                    let (xf, yf) = (x as f64, y as f64);
                    let from_prev = sample(a, h, w, xf - back[p] * u, yf - back[p] * v);
                    let from_cur = sample(b, h, w, xf + fwd[p] * u, yf + fwd[p] * v);
                    dst[p] = 0.5 * from_prev + 0.5 * from_cur;
                }
            }
        }
        out.push(Frame::from_tensor(t)?);
    }
    Ok(out)
}

/// `Σ_i A_i ⊙ I_i`, with weights shared across colour channels.
pub fn accumulate(instants: &[Frame], accum: &AccumWeights) -> Result<Frame> {
    let first = instants.first().ok_or_else(|| invalid!("no instant images"))?;
    let a = &accum.0;
    if a.channels != instants.len() || a.height != first.height() || a.width != first.width() {
        return Err(invalid!(
            "{} instants of {}x{} vs accumulation weights {:?}",
            instants.len(),
            first.height(),
            first.width(),
            a.shape()
        ));
    }
    if instants.iter().any(|f| !f.same_dims(first)) {
        return Err(invalid!("instant images differ in shape"));
    }
    let v = stack_violation(a);
    if v > 1e-3 {
        return Err(invalid!("accumulation weights violate their constraints by {v:.3e}"));
    }
    let n = a.plane_len();
    let mut out = Tensor::zeros(first.channels(), first.height(), first.width());
    for (i, inst) in instants.iter().enumerate() {
        let wp = a.plane(i);
        for ch in 0..first.channels() {
            let src = inst.plane(ch);
            let dst = &mut out.data[ch * n..(ch + 1) * n];
            for ((d, s), w) in dst.iter_mut().zip(src).zip(wp) {
                *d += w * s;
            }
        }
    }
    Frame::from_tensor(out)
}

/// `Blur(I_t, I_{t-1}, W, A)`.
pub fn blur(cur: &Frame, prev: &Frame, flow: &FlowField, params: &BlurParams) -> Result<Frame> {
    blur_with(cur, prev, flow, params, SubMotion::Cumulative)
}

pub fn blur_with(cur: &Frame, prev: &Frame, flow: &FlowField, params: &BlurParams, mode: SubMotion) -> Result<Frame> {
    let instants = instant_images_with(prev, cur, flow, &params.ratios, mode)?;
    accumulate(&instants, &params.accum)
}

/// Blur with uniform ratios and weights (the non-adversarial baseline).
pub fn norm_blur(cur: &Frame, prev: &Frame, flow: &FlowField, n: usize) -> Result<Frame> {
    let params = uniform_params(n, cur.height(), cur.width())?;
    blur(cur, prev, flow, &params)
}

/// Clips every element into `[0,1]` and renormalises each stack to unit
/// per-pixel sum; pixels whose clipped sum is below `1e-8` reset to uniform.
pub fn project_constraints(params: &BlurParams) -> BlurParams {
    BlurParams {
        ratios: MotionRatios(project_stack(&params.ratios.0)),
        accum: AccumWeights(project_stack(&params.accum.0)),
    }
}

pub(crate) fn project_stack(t: &Tensor) -> Tensor {
    let mut out = t.clone();
    let (c, h, w) = t.shape();
    let n = h * w;
    for p in 0..n {
        let mut sum = 0.0;
        for i in 0..c {
            let v = &mut out.data[i * n + p];
            *v = v.clamp(0.0, 1.0);
            sum += *v;
        }
        for i in 0..c {
            let v = &mut out.data[i * n + p];
            *v = if sum < 1e-8 { 1.0 / c as f64 } else { *v / sum };
        }
    }
    out
}

/// Records the instant images on a tape. `ratios` holds `N-1` planes.
pub fn instants_on_tape(
    tape: &mut Tape,
    prev: Var,
    cur: Var,
    flow: Var,
    ratios: Var,
    mode: SubMotion,
) -> Result<Vec<Var>> {
    let terms = match mode {
        SubMotion::Cumulative => ratios,
        SubMotion::Squared => tape.mul(ratios, ratios)?,
    };
    let prefix = tape.prefix_sum(terms);
    let suffix = tape.suffix_sum(terms);
    let n = tape.value(prefix).channels;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let c = tape.slice(prefix, i, 1)?;
        let back = tape.mul_plane(c, flow)?;
        let back = tape.scale(back, -1.0);
        let r = tape.slice(suffix, i, 1)?;
        let fwd = tape.mul_plane(r, flow)?;
        let a = tape.warp(prev, back)?;
        let b = tape.warp(cur, fwd)?;
        let s = tape.add(a, b)?;
        out.push(tape.scale(s, 0.5));
    }
    Ok(out)
}

/// Records `Σ_i A_i ⊙ I_i` on a tape.
pub fn accumulate_on_tape(tape: &mut Tape, instants: &[Var], accum: Var) -> Result<Var> {
    if tape.value(accum).channels != instants.len() {
        return Err(invalid!("{} instants but {} weight planes", instants.len(), tape.value(accum).channels));
    }
    let mut terms = Vec::with_capacity(instants.len());
    for (i, &inst) in instants.iter().enumerate() {
        let a = tape.slice(accum, i, 1)?;
        terms.push(tape.mul_plane(a, inst)?);
    }
    tape.add_n(&terms)
}

/// Records the full blur; returns the blurred frame node.
pub fn blur_on_tape(
    tape: &mut Tape,
    cur: &Frame,
    prev: &Frame,
    flow: &FlowField,
    ratios: Var,
    accum: Var,
) -> Result<Var> {
    check_frames(prev, cur)?;
    check_flow(flow, cur.height(), cur.width())?;
    let prev = tape.constant(prev.as_tensor().clone());
    let cur = tape.constant(cur.as_tensor().clone());
    let flow = tape.constant(flow.to_tensor());
    let instants = instants_on_tape(tape, prev, cur, flow, ratios, SubMotion::Cumulative)?;
    accumulate_on_tape(tape, &instants, accum)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::grad_check;
    use alloc::vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_frame(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> Frame {
        Frame::new(c, h, w, (0..c * h * w).map(|_| rng.gen()).collect()).unwrap()
    }

    fn random_simplex(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> Tensor {
        let raw = Tensor::from_vec(c, h, w, (0..c * h * w).map(|_| rng.gen_range(0.05..1.0)).collect()).unwrap();
        project_stack(&raw)
    }

    #[test]
    fn uniform_params_values() {
        let p = uniform_params(3, 4, 4).unwrap();
        assert!(p.ratios.0.data.iter().all(|&v| v == 0.5));
        assert!(p.accum.0.data.iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
        let p = uniform_params(17, 2, 2).unwrap();
        assert!(p.ratios.0.data.iter().all(|&v| v == 1.0 / 16.0));
        assert!(p.accum.0.data.iter().all(|&v| v == 1.0 / 17.0));
        let p = uniform_params(2, 2, 2).unwrap();
        assert_eq!(p.ratios.0.channels, 1);
        assert!(p.ratios.0.data.iter().all(|&v| v == 1.0));
        assert!(uniform_params(1, 2, 2).is_err());
    }

    #[test]
    fn uniform_split_arithmetic() {
        let p = uniform_params(3, 2, 2).unwrap();
        let (c, r) = cumulative_flows(&FlowField::constant(2, 2, 2.0, 0.0), &p.ratios).unwrap();
        let cdx: Vec<f64> = c.iter().map(|f| f.dx[0]).collect();
        let rdx: Vec<f64> = r.iter().map(|f| f.dx[0]).collect();
        assert_eq!(cdx, vec![0.0, 1.0, 2.0]);
        assert_eq!(rdx, vec![2.0, 1.0, 0.0]);
    }

    #[test]
    fn cumulative_plus_remaining_is_total() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ratios = MotionRatios(random_simplex(&mut rng, 4, 4, 4));
        let flow = FlowField::new(
            4,
            4,
            (0..16).map(|_| rng.gen_range(-3.0..3.0)).collect(),
            (0..16).map(|_| rng.gen_range(-3.0..3.0)).collect(),
        )
        .unwrap();
        let (c, r) = cumulative_flows(&flow, &ratios).unwrap();
        // direct summation oracle
        for i in 0..5 {
            for p in 0..16 {
                let before: f64 = (0..i).map(|j| ratios.0.data[j * 16 + p]).sum();
                assert!((c[i].dx[p] - before * flow.dx[p]).abs() < 1e-12);
                assert!((c[i].dx[p] + r[i].dx[p] - flow.dx[p]).abs() < 1e-6);
                assert!((c[i].dy[p] + r[i].dy[p] - flow.dy[p]).abs() < 1e-6);
            }
        }
        assert!(c[4].dx.iter().zip(&flow.dx).all(|(a, b)| (a - b).abs() < 1e-12));
        assert!(c[0].dx.iter().all(|&v| v == 0.0));
        assert!(r[4].dx.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dimension_mismatch_errors() {
        let p = uniform_params(3, 4, 4).unwrap();
        assert!(cumulative_flows(&FlowField::zeros(4, 5), &p.ratios).is_err());
        let a = Frame::filled(1, 4, 4, 0.5).unwrap();
        let b = Frame::filled(1, 4, 5, 0.5).unwrap();
        assert!(instant_images(&a, &b, &FlowField::zeros(4, 4), &p.ratios).is_err());
    }

    #[test]
    fn identical_frames_zero_flow() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = random_frame(&mut rng, 3, 8, 8);
        let p = uniform_params(5, 8, 8).unwrap();
        for inst in instant_images(&f, &f, &FlowField::zeros(8, 8), &p.ratios).unwrap() {
            assert!(inst.max_abs_diff(&f) < 1e-12);
        }
        let params = BlurParams {
            ratios: MotionRatios(random_simplex(&mut rng, 4, 8, 8)),
            accum: AccumWeights(random_simplex(&mut rng, 5, 8, 8)),
        };
        let out = blur(&f, &f, &FlowField::zeros(8, 8), &params).unwrap();
        assert!(out.max_abs_diff(&f) < 1e-6);
        assert!(norm_blur(&f, &f, &FlowField::zeros(8, 8), 17).unwrap().max_abs_diff(&f) < 1e-6);
    }

    #[test]
    fn uniform_accumulation_is_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let instants: Vec<Frame> = (0..4).map(|_| random_frame(&mut rng, 1, 8, 8)).collect();
        let out = accumulate(&instants, &uniform_params(4, 8, 8).unwrap().accum).unwrap();
        for p in 0..64 {
            let mean = instants.iter().map(|f| f.data()[p]).sum::<f64>() / 4.0;
            assert!((out.data()[p] - mean).abs() < 1e-6);
        }
    }

    #[test]
    fn one_hot_accumulation_selects() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let instants: Vec<Frame> = (0..3).map(|_| random_frame(&mut rng, 3, 8, 8)).collect();
        let mut a = Tensor::zeros(3, 8, 8);
        a.plane_mut(1).iter_mut().for_each(|v| *v = 1.0);
        let out = accumulate(&instants, &AccumWeights(a)).unwrap();
        assert_eq!(out, instants[1]);
    }

    #[test]
    fn accumulation_rejects_invalid_weights() {
        let instants = vec![Frame::filled(1, 8, 8, 0.5).unwrap(); 2];
        let a = Tensor::filled(2, 8, 8, 0.6);
        assert!(accumulate(&instants, &AccumWeights(a)).is_err());
    }

    #[test]
    fn projection_rules() {
        let ratios = Tensor::from_vec(2, 1, 1, vec![1.4, 0.2]).unwrap();
        let accum = Tensor::from_vec(3, 1, 1, vec![-0.5, -0.2, -1.0]).unwrap();
        let p = project_constraints(&BlurParams::new(MotionRatios(ratios), AccumWeights(accum)).unwrap());
        assert!((p.ratios.0.data[0] - 1.0 / 1.2).abs() < 1e-4);
        assert!((p.ratios.0.data[1] - 0.2 / 1.2).abs() < 1e-4);
        assert!(p.accum.0.data.iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
        let valid = uniform_params(4, 3, 3).unwrap();
        let again = project_constraints(&valid);
        assert!(again.ratios.0.max_abs_diff(&valid.ratios.0) < 1e-9);
        assert!(again.accum.0.max_abs_diff(&valid.accum.0) < 1e-9);
    }

    #[test]
    fn taped_blur_matches_direct_blur() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let prev = random_frame(&mut rng, 3, 8, 8);
        let cur = random_frame(&mut rng, 3, 8, 8);
        let flow = FlowField::new(
            8,
            8,
            (0..64).map(|_| rng.gen_range(-2.0..2.0)).collect(),
            (0..64).map(|_| rng.gen_range(-2.0..2.0)).collect(),
        )
        .unwrap();
        let params = BlurParams {
            ratios: MotionRatios(random_simplex(&mut rng, 3, 8, 8)),
            accum: AccumWeights(random_simplex(&mut rng, 4, 8, 8)),
        };
        let direct = blur(&cur, &prev, &flow, &params).unwrap();
        let mut tape = Tape::new();
        let w = tape.param(params.ratios.0.clone());
        let a = tape.param(params.accum.0.clone());
        let out = blur_on_tape(&mut tape, &cur, &prev, &flow, w, a).unwrap();
        assert!(tape.value(out).max_abs_diff(direct.as_tensor()) < 1e-12);
    }

    #[test]
    fn squared_energy_gradient_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let (h, w, n) = (8, 8, 3);
        let prev = random_frame(&mut rng, 1, h, w);
        let cur = random_frame(&mut rng, 1, h, w);
        let flow = FlowField::new(
            h,
            w,
            (0..h * w).map(|_| rng.gen_range(-1.9..1.9)).collect(),
            (0..h * w).map(|_| rng.gen_range(-1.9..1.9)).collect(),
        )
        .unwrap();
        let params = uniform_params(n, h, w).unwrap();
        let energy = |wt: &Tensor, at: &Tensor| -> (f64, Tensor, Tensor) {
            let mut tape = Tape::new();
            let wv = tape.param(wt.clone());
            let av = tape.param(at.clone());
            let out = blur_on_tape(&mut tape, &cur, &prev, &flow, wv, av).unwrap();
            let zero = tape.constant(Tensor::zeros(1, h, w));
            let loss = tape.squared_error(out, zero).unwrap();
            let g = tape.backward(loss).unwrap();
            (tape.value(loss).data[0], g.get(&tape, wv), g.get(&tape, av))
        };
        let (_, gw, ga) = energy(&params.ratios.0, &params.accum.0);
        let mut flat = params.ratios.0.data.clone();
        let split = flat.len();
        flat.extend_from_slice(&params.accum.0.data);
        let mut analytic = gw.data.clone();
        analytic.extend_from_slice(&ga.data);
        let f = |x: &[f64]| {
            let wt = Tensor::from_vec(n - 1, h, w, x[..split].to_vec()).unwrap();
            let at = Tensor::from_vec(n, h, w, x[split..].to_vec()).unwrap();
            Ok(energy(&wt, &at).0)
        };
        let err = grad_check(f, &flat, &analytic, 1e-3).unwrap();
        assert!(err < 1e-3, "relative error {err}");
    }

    #[test]
    fn blurred_values_stay_within_instant_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let prev = random_frame(&mut rng, 1, 8, 8);
        let cur = random_frame(&mut rng, 1, 8, 8);
        let flow = FlowField::constant(8, 8, 1.3, -0.7);
        let params = BlurParams {
            ratios: MotionRatios(random_simplex(&mut rng, 3, 8, 8)),
            accum: AccumWeights(random_simplex(&mut rng, 4, 8, 8)),
        };
        let instants = instant_images(&prev, &cur, &flow, &params.ratios).unwrap();
        let out = accumulate(&instants, &params.accum).unwrap();
        for p in 0..64 {
            let lo = instants.iter().map(|f| f.data()[p]).fold(f64::INFINITY, f64::min);
            let hi = instants.iter().map(|f| f.data()[p]).fold(f64::NEG_INFINITY, f64::max);
            assert!(out.data()[p] >= lo - 1e-12 && out.data()[p] <= hi + 1e-12);
        }
    }
}
