//! Optimization-based blur attack: signed-gradient descent over the motion
//! ratios and accumulation weights of one frame, pushing the tracker's
//! response peak onto a background cell.

use alloc::vec::Vec;

use crate::blur::{blur, blur_on_tape, project_constraints, uniform_params, AccumWeights, BlurParams, MotionRatios, DEFAULT_INSTANTS};
use crate::error::invalid;
use crate::flow::{crop_flow, estimate_flow, FlowConfig};
use crate::numerics::{bce, sigmoid, FlowField, Frame, Tape, Tensor, Var};
use crate::tracker::{argmax, crop_search_region, respond_on_tape, response_values, BBox, TrackerModel};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossKind {
    #[default]
    L2,
    CrossEntropy,
}

/// Desired response: a single peak on the background.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackTarget {
    pub target_map: Tensor,
    /// `(row, col)` of the peak.
    pub peak: (usize, usize),
    pub loss_kind: LossKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Freeze {
    #[default]
    None,
    Ratios,
    Accum,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OpAttackConfig {
    pub iterations: usize,
    pub step_ratios: f64,
    pub step_accum: f64,
    pub n_instants: usize,
    pub attack_every: usize,
    pub loss_kind: LossKind,
    /// Use the previously emitted (possibly blurred) frame as `prev`.
    pub chain_prev_blurred: bool,
}

impl Default for OpAttackConfig {
    fn default() -> Self {
        OpAttackConfig {
            iterations: 10,
            step_ratios: 0.002,
            step_accum: 0.0002,
            n_instants: DEFAULT_INSTANTS,
            attack_every: 5,
            loss_kind: LossKind::L2,
            chain_prev_blurred: false,
        }
    }
}

impl OpAttackConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.iterations == 0 {
            return bad("iterations must be at least 1");
        }
        if self.attack_every == 0 {
            return bad("attack_every must be at least 1");
        }
        if self.n_instants < 2 {
            return bad("n_instants must be at least 2");
        }
        // a frozen stack is expressed as a zero step
        if !(self.step_ratios >= 0.0 && self.step_accum >= 0.0) || !self.step_ratios.is_finite() || !self.step_accum.is_finite() {
            return bad("step sizes must be finite and non-negative");
        }
        if self.step_ratios == 0.0 && self.step_accum == 0.0 {
            return bad("at least one step size must be positive");
        }
        Ok(())
    }
}

/// Configuration for the ablation rows: the frozen stack gets a zero step.
pub fn ablation_variant(config: &OpAttackConfig, freeze: Freeze) -> OpAttackConfig {
    let mut c = *config;
    match freeze {
        Freeze::None => {}
        Freeze::Ratios => c.step_ratios = 0.0,
        Freeze::Accum => c.step_accum = 0.0,
    }
    c
}

/// Whether 0-based frame `index` is attacked: the first frame never is, then
/// every `attack_every`-th frame starting with the second.
pub fn is_attack_frame(index: usize, attack_every: usize) -> bool {
    index >= 1 && (index - 1).is_multiple_of(attack_every.max(1))
}

/// Builds Y* from the clean response. The object occupies an
/// `object_w × object_h` block of cells centered on the clean argmax; the
/// target peak is the strongest cell outside it.
pub fn make_target(clean: &Tensor, object_w: usize, object_h: usize, loss_kind: LossKind) -> AttackTarget {
    let (h, w) = (clean.height, clean.width);
    let (ar, ac) = argmax(clean);
    let span = |center: usize, size: usize, extent: usize| {
        let lo = center.saturating_sub(size / 2);
        let hi = (lo + size.max(1) - 1).min(extent - 1);
        (lo, hi)
    };
    let (r0, r1) = span(ar, object_h, h);
    let (c0, c1) = span(ac, object_w, w);
    let mut best: Option<(usize, usize)> = None;
    for r in 0..h {
        for c in 0..w {
            if (r0..=r1).contains(&r) && (c0..=c1).contains(&c) {
                continue;
            }
            let v = clean.at(0, r, c);
            if best.is_none_or(|(br, bc)| v > clean.at(0, br, bc)) {
                best = Some((r, c));
            }
        }
    }
    let peak = best.unwrap_or_else(|| {
        let corners = [(0, 0), (0, w - 1), (h - 1, 0), (h - 1, w - 1)];
        let mut p = corners[0];
        for q in &corners[1..] {
            if clean.at(0, q.0, q.1) > clean.at(0, p.0, p.1) {
                p = *q;
            }
        }
        p
    });
    let fill = match loss_kind {
        LossKind::L2 => 0.0,
        LossKind::CrossEntropy => -1.0,
    };
    let mut target_map = Tensor::filled(1, h, w, fill);
    *target_map.at_mut(0, peak.0, peak.1) = 1.0;
    AttackTarget {
        target_map,
        peak,
        loss_kind,
    }
}

fn bce_labels(target: &AttackTarget) -> Tensor {
    let mut t = target.target_map.clone();
    t.data.iter_mut().for_each(|v| *v = (*v + 1.0) / 2.0);
    t
}

pub fn adversarial_loss(pred: &Tensor, target: &AttackTarget) -> Result<f64> {
    if !pred.same_shape(&target.target_map) {
        return Err(invalid!(
            "response shape {:?} does not match target {:?}",
            pred.shape(),
            target.target_map.shape()
        ));
    }
    Ok(match target.loss_kind {
        LossKind::L2 => pred.data.iter().zip(&target.target_map.data).map(|(p, t)| (p - t) * (p - t)).sum(),
        LossKind::CrossEntropy => {
            let labels = bce_labels(target);
            pred.data.iter().zip(&labels.data).map(|(&p, &t)| bce(sigmoid(p), t)).sum()
        }
    })
}

pub fn adversarial_loss_on_tape(tape: &mut Tape, pred: Var, target: &AttackTarget) -> Result<Var> {
    match target.loss_kind {
        LossKind::L2 => {
            let t = tape.constant(target.target_map.clone());
            tape.squared_error(pred, t)
        }
        LossKind::CrossEntropy => {
            let p = tape.sigmoid(pred);
            let t = tape.constant(bce_labels(target));
            tape.binary_cross_entropy(p, t)
        }
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Removes the per-pixel mean across planes.
///
/// The accumulation gradient at a pixel is the output gradient times each
/// instant's (non-negative) intensity, so its raw sign agrees across planes
/// and the renormalization would cancel the step. Only the part tangent to
/// the sum constraint carries information.
fn centered_across_planes(g: &Tensor) -> Tensor {
    let plane = g.height * g.width;
    let mut out = g.clone();
    for p in 0..plane {
        let mean = (0..g.channels).map(|c| g.data[c * plane + p]).sum::<f64>() / g.channels as f64;
        let scale = (0..g.channels).map(|c| g.data[c * plane + p].abs()).fold(0.0, f64::max);
        for c in 0..g.channels {
            let v = &mut out.data[c * plane + p];
            *v -= mean;
            // rounding residue from identical instants is not a direction
            if v.abs() <= 1e-12 * scale {
                *v = 0.0;
            }
        }
    }
    out
}

/// One signed-gradient step on both stacks followed by projection. The
/// accumulation gradient is centered across planes before taking its sign.
pub fn signed_step(params: &BlurParams, grad_ratios: &Tensor, grad_accum: &Tensor, config: &OpAttackConfig) -> Result<BlurParams> {
    if !grad_ratios.same_shape(&params.ratios.0) || !grad_accum.same_shape(&params.accum.0) {
        return Err(invalid!("gradient shapes do not match the parameters"));
    }
    if !grad_ratios.all_finite() || !grad_accum.all_finite() {
        return Err(Error::AbortIteration("non-finite gradient".into()));
    }
    let step = |p: &Tensor, g: &Tensor, s: f64| {
        let mut out = p.clone();
        for (v, d) in out.data.iter_mut().zip(&g.data) {
            *v -= s * sign(*d);
        }
        out
    };
    let raw = BlurParams {
        ratios: MotionRatios(step(&params.ratios.0, grad_ratios, config.step_ratios)),
        accum: AccumWeights(step(&params.accum.0, &centered_across_planes(grad_accum), config.step_accum)),
    };
    Ok(project_constraints(&raw))
}

/// Loss and gradients of the blur → respond → loss pipeline at `params`.
pub fn loss_and_grads(
    model: &TrackerModel,
    cur: &Frame,
    prev: &Frame,
    flow: &FlowField,
    params: &BlurParams,
    target: &AttackTarget,
) -> Result<(f64, (usize, usize), Tensor, Tensor)> {
    let mut tape = Tape::new();
    let r = tape.param(params.ratios.0.clone());
    let a = tape.param(params.accum.0.clone());
    let blurred = blur_on_tape(&mut tape, cur, prev, flow, r, a)?;
    let resp = respond_on_tape(&mut tape, model, blurred)?;
    let peak = argmax(tape.value(resp));
    let loss = adversarial_loss_on_tape(&mut tape, resp, target)?;
    let value = tape.value(loss).data[0];
    let grads = tape.backward(loss)?;
    Ok((value, peak, grads.get(&tape, r), grads.get(&tape, a)))
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct OpStats {
    /// Loss before each step, then the loss of the returned region.
    pub losses: Vec<f64>,
    /// Response argmax `(row, col)` matching each entry of `losses`.
    pub argmax: Vec<(usize, usize)>,
    pub target_peak: (usize, usize),
    /// Set when a non-finite gradient stopped the descent early.
    pub aborted: bool,
}

impl OpStats {
    pub fn initial_loss(&self) -> f64 {
        self.losses.first().copied().unwrap_or(f64::NAN)
    }

    pub fn final_loss(&self) -> f64 {
        self.losses.last().copied().unwrap_or(f64::NAN)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OpOutcome {
    pub blurred: Frame,
    pub params: BlurParams,
    pub stats: OpStats,
}

/// Runs the attack on already-cropped regions with a fixed flow.
/// `on_iter` sees the parameters after every step.
pub fn attack_region_with(
    model: &TrackerModel,
    cur: &Frame,
    prev: &Frame,
    flow: &FlowField,
    config: &OpAttackConfig,
    mut on_iter: impl FnMut(&BlurParams),
) -> Result<OpOutcome> {
    config.validate()?;
    let clean = response_values(model, cur.as_tensor())?;
    let (tw, th) = model.template_size();
    let target = make_target(&clean, tw, th, config.loss_kind);
    let mut params = uniform_params(config.n_instants, cur.height(), cur.width())?;
    let mut stats = OpStats {
        target_peak: target.peak,
        ..OpStats::default()
    };
    for _ in 0..config.iterations {
        let (loss, peak, gr, ga) = loss_and_grads(model, cur, prev, flow, &params, &target)?;
        stats.losses.push(loss);
        stats.argmax.push(peak);
        match signed_step(&params, &gr, &ga, config) {
            Ok(next) => params = next,
            Err(Error::AbortIteration(_)) => {
                stats.aborted = true;
                break;
            }
            Err(e) => return Err(e),
        }
        on_iter(&params);
    }
    let blurred = blur(cur, prev, flow, &params)?;
    let resp = response_values(model, blurred.as_tensor())?;
    stats.losses.push(adversarial_loss(&resp, &target)?);
    stats.argmax.push(argmax(&resp));
    Ok(OpOutcome { blurred, params, stats })
}

pub fn attack_region(model: &TrackerModel, cur: &Frame, prev: &Frame, flow: &FlowField, config: &OpAttackConfig) -> Result<OpOutcome> {
    attack_region_with(model, cur, prev, flow, config, |_| {})
}

/// Where the attack gets its flow from.
#[derive(Debug, Clone, PartialEq)]
pub enum FlowSource<'a> {
    Estimate(FlowConfig),
    /// Full-frame field, cropped with the search region.
    Given(&'a FlowField),
}

/// Region-level inputs for attacking `cur`: both regions are cropped at the
/// same place around `prev_bbox` and the flow is fixed once.
pub fn prepare_regions(
    cur: &Frame,
    prev: &Frame,
    prev_bbox: &BBox,
    context: f64,
    flow: &FlowSource<'_>,
) -> Result<(Frame, Frame, FlowField, crate::tracker::RegionTransform)> {
    let (cur_region, tr) = crop_search_region(cur, prev_bbox, context)?;
    let (prev_region, _) = crop_search_region(prev, prev_bbox, context)?;
    let f = match flow {
        FlowSource::Estimate(cfg) => estimate_flow(&prev_region, &cur_region, cfg)?,
        FlowSource::Given(full) => crop_flow(full, tr, cur_region.width(), cur_region.height()),
    };
    Ok((cur_region, prev_region, f, tr))
}

/// Attacks the search region of `cur` around `prev_bbox`.
pub fn attack_frame(
    model: &TrackerModel,
    cur: &Frame,
    prev: &Frame,
    prev_bbox: &BBox,
    context: f64,
    flow: &FlowSource<'_>,
    config: &OpAttackConfig,
) -> Result<OpOutcome> {
    let (cur_r, prev_r, f, _) = prepare_regions(cur, prev, prev_bbox, context, flow)?;
    attack_region(model, &cur_r, &prev_r, &f, config)
}

/// Largest relative error between the analytic gradient of the attack loss
/// (blur, NCC response, L2 loss) and central differences with step `eps`,
/// over every ratio and accumulation element of a random `size`×`size`
/// region with `n` instants. The template is the region's centered
/// half-size patch.
pub fn pipeline_gradient_error(size: usize, n: usize, eps: f64, seed: u64) -> Result<f64> {
    use rand::{Rng, SeedableRng};
    if size < 8 || n < 2 {
        return Err(invalid!("gradient check needs a region of at least 8x8 and two instants"));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let frame = |rng: &mut rand_chacha::ChaCha8Rng| {
        let v: Vec<f64> = (0..size * size).map(|_| rng.gen::<f64>()).collect();
        Frame::from_fn_gray(size, size, |y, x| v[y * size + x])
    };
    let prev = frame(&mut rng);
    let cur = frame(&mut rng);
    let flow = FlowField::new(
        size,
        size,
        (0..size * size).map(|_| rng.gen_range(-1.5..1.5)).collect(),
        (0..size * size).map(|_| rng.gen_range(-1.5..1.5)).collect(),
    )?;
    let half = (size / 2) as f64;
    let model = crate::tracker::init(&prev, &BBox::new(half, half, half, half)?, crate::tracker::FeatureKind::Intensity)?;
    let mut simplex = |planes: usize| {
        let mut t = Tensor::zeros(planes, size, size);
        for p in 0..size * size {
            let raw: Vec<f64> = (0..planes).map(|_| rng.gen_range(0.2..1.0)).collect();
            let sum: f64 = raw.iter().sum();
            for (c, v) in raw.iter().enumerate() {
                t.data[c * size * size + p] = v / sum;
            }
        }
        t
    };
    let params = BlurParams {
        ratios: MotionRatios(simplex(n - 1)),
        accum: AccumWeights(simplex(n)),
    };
    let clean = response_values(&model, cur.as_tensor())?;
    let (tw, th) = model.template_size();
    let target = make_target(&clean, tw, th, LossKind::L2);
    let (_, _, gr, ga) = loss_and_grads(&model, &cur, &prev, &flow, &params, &target)?;
    let split = gr.len();
    let mut flat = params.ratios.0.data.clone();
    flat.extend_from_slice(&params.accum.0.data);
    let mut analytic = gr.data;
    analytic.extend_from_slice(&ga.data);
    let f = |x: &[f64]| {
        let p = BlurParams {
            ratios: MotionRatios(Tensor::from_vec(n - 1, size, size, x[..split].to_vec())?),
            accum: AccumWeights(Tensor::from_vec(n, size, size, x[split..].to_vec())?),
        };
        // probes leave the simplex, so evaluate through the unchecked taped path
        Ok(loss_and_grads(&model, &cur, &prev, &flow, &p, &target)?.0)
    };
    crate::numerics::grad_check(f, &flat, &analytic, eps)
}
