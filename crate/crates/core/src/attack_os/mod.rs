//! One-step blur attack: an encoder with two decoder heads predicts the
//! accumulation and motion-ratio stacks directly from the instant images.

mod train;

pub use train::{build_dataset, train, train_with, Adam, TrainConfig, TrainLog, TrainRow, TrainSample};

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attack_op::{adversarial_loss_on_tape, AttackTarget};
use crate::blur::{blur, blur_on_tape, instant_images, project_stack, uniform_params, AccumWeights, BlurParams, MotionRatios};
use crate::numerics::conv::{resize_bilinear, ConvGeometry};
use crate::numerics::{FlowField, Frame, Tape, Tensor, Var};
use crate::tracker::{respond_on_tape, TrackerModel};
use crate::{Error, Result};

pub const LEAKY_SLOPE: f64 = 0.2;
const KERNEL: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    ConvTranspose,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub kind: LayerKind,
    pub geom: ConvGeometry,
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Layer {
    fn new(kind: LayerKind, cin: usize, cout: usize) -> Self {
        let geom = ConvGeometry {
            cin,
            cout,
            kernel: KERNEL,
            stride: 2,
            pad: 1,
        };
        Layer {
            kind,
            geom,
            weight: Tensor::zeros(cin * cout, KERNEL, KERNEL),
            bias: Tensor::zeros(cout, 1, 1),
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetConfig {
    pub n_instants: usize,
    /// Channels per instant image (1 for grayscale scenes).
    pub image_channels: usize,
    pub input_size: usize,
    /// Encoder widths; the depth is their count.
    pub widths: Vec<usize>,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            n_instants: crate::blur::DEFAULT_INSTANTS,
            image_channels: 1,
            input_size: 32,
            widths: vec![8, 16, 16, 16],
        }
    }
}

impl NetConfig {
    pub fn depth(&self) -> usize {
        self.widths.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: alloc::string::String| Err(Error::InvalidConfig(m));
        let e = self.depth();
        if !(1..=6).contains(&e) {
            return bad(format!("network depth must be 1..=6, got {e}"));
        }
        if self.widths.contains(&0) {
            return bad("channel widths must be positive".into());
        }
        if self.n_instants < 2 {
            return bad("n_instants must be at least 2".into());
        }
        if self.image_channels != 1 && self.image_channels != 3 {
            return bad("image_channels must be 1 or 3".into());
        }
        if self.input_size == 0 || !self.input_size.is_multiple_of(1 << e) {
            return bad(format!("input_size {} must be a positive multiple of 2^{e}", self.input_size));
        }
        Ok(())
    }
}

/// Encoder plus accumulation and ratio decoders. Layers are stored as
/// encoder, accumulation head, ratio head, each `depth` long.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorNet {
    pub config: NetConfig,
    pub layers: Vec<Layer>,
}

fn decoder(widths: &[usize], out: usize) -> Vec<Layer> {
    let e = widths.len();
    let mut layers = Vec::with_capacity(e);
    for d in 0..e {
        // stage d consumes the previous stage (or the bottleneck) and, past
        // the first stage, the encoder feature of the same resolution
        let cin = if d == 0 { widths[e - 1] } else { 2 * widths[e - 1 - d] };
        let cout = if d + 1 == e { out } else { widths[e - 2 - d] };
        layers.push(Layer::new(LayerKind::ConvTranspose, cin, cout));
    }
    layers
}

impl PredictorNet {
    /// Randomly initialized hidden layers; both output layers start at zero
    /// so the untrained net reproduces uniform blur.
    pub fn new(config: NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let n = config.n_instants;
        let mut layers = Vec::with_capacity(3 * config.depth());
        let mut cin = config.image_channels * n;
        for &w in &config.widths {
            layers.push(Layer::new(LayerKind::Conv, cin, w));
            cin = w;
        }
        layers.extend(decoder(&config.widths, n));
        layers.extend(decoder(&config.widths, n - 1));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let e = config.depth();
        for (i, layer) in layers.iter_mut().enumerate() {
            if i % e == e - 1 && i >= e {
                continue;
            }
            let fan_in = (layer.geom.cin * KERNEL * KERNEL) as f64;
            let bound = Float::sqrt(6.0 / ((1.0 + LEAKY_SLOPE * LEAKY_SLOPE) * fan_in));
            layer.weight.data.iter_mut().for_each(|v| *v = rng.gen_range(-bound..bound));
        }
        Ok(PredictorNet { config, layers })
    }

    /// Builds a net from explicit layers, checking they match `config`.
    pub fn from_layers(config: NetConfig, layers: Vec<Layer>) -> Result<Self> {
        let reference = Self::new(config.clone(), 0)?;
        if layers.len() != reference.layers.len()
            || layers.iter().zip(&reference.layers).any(|(a, b)| {
                a.kind != b.kind || a.geom != b.geom || a.weight.shape() != b.weight.shape() || a.bias.shape() != b.bias.shape()
            })
        {
            return Err(Error::InvalidConfig("layer shapes do not match the network configuration".into()));
        }
        if layers.iter().any(|l| !l.weight.all_finite() || !l.bias.all_finite()) {
            return Err(Error::InvalidConfig("network weights must be finite".into()));
        }
        Ok(PredictorNet { config, layers })
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    /// Flattened parameters, layer by layer (weight then bias).
    pub fn flat_params(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            v.extend_from_slice(&l.weight.data);
            v.extend_from_slice(&l.bias.data);
        }
        v
    }

    pub fn set_flat_params(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.param_count() {
            return Err(Error::InvalidArgument(format!("expected {} parameters, got {}", self.param_count(), p.len())));
        }
        let mut i = 0;
        for l in &mut self.layers {
            let n = l.weight.len();
            l.weight.data.copy_from_slice(&p[i..i + n]);
            i += n;
            let n = l.bias.len();
            l.bias.data.copy_from_slice(&p[i..i + n]);
            i += n;
        }
        Ok(())
    }
}

/// Parameter handles of one net on one tape.
pub struct NetVars {
    pub layers: Vec<(Var, Var)>,
}

impl NetVars {
    pub fn register(tape: &mut Tape, net: &PredictorNet, trainable: bool) -> Self {
        let layers = net
            .layers
            .iter()
            .map(|l| {
                if trainable {
                    (tape.param(l.weight.clone()), tape.param(l.bias.clone()))
                } else {
                    (tape.constant(l.weight.clone()), tape.constant(l.bias.clone()))
                }
            })
            .collect();
        NetVars { layers }
    }
}

fn apply(tape: &mut Tape, layer: &Layer, vars: (Var, Var), x: Var) -> Result<Var> {
    match layer.kind {
        LayerKind::Conv => tape.conv2d(x, vars.0, vars.1, layer.geom),
        LayerKind::ConvTranspose => tape.conv_transpose2d(x, vars.0, vars.1, layer.geom),
    }
}

/// Raw head outputs `(accumulation, ratio logits)` at input resolution.
pub fn forward_on_tape(tape: &mut Tape, net: &PredictorNet, vars: &NetVars, input: Var) -> Result<(Var, Var)> {
    let e = net.config.depth();
    let mut skips = Vec::with_capacity(e);
    let mut x = input;
    for i in 0..e {
        x = apply(tape, &net.layers[i], vars.layers[i], x)?;
        x = tape.leaky_relu(x, LEAKY_SLOPE);
        skips.push(x);
    }
    let mut heads = [input; 2];
    for (h, head) in heads.iter_mut().enumerate() {
        let base = e * (h + 1);
        let mut y = skips[e - 1];
        for d in 0..e {
            if d > 0 {
                y = tape.concat(&[y, skips[e - 1 - d]])?;
            }
            y = apply(tape, &net.layers[base + d], vars.layers[base + d], y)?;
            if d + 1 < e {
                y = tape.leaky_relu(y, LEAKY_SLOPE);
            }
        }
        *head = y;
    }
    Ok((heads[0], heads[1]))
}

/// Stacks instants into `[C·N, S, S]`, resized and mapped to `[-1, 1]`.
pub fn net_input(instants: &[Frame], size: usize) -> Result<Tensor> {
    let first = instants.first().ok_or_else(|| Error::InvalidArgument("no instant images".into()))?;
    let (c, h, w) = first.as_tensor().shape();
    let mut stacked = Tensor::zeros(c * instants.len(), h, w);
    for (i, f) in instants.iter().enumerate() {
        if !f.same_dims(first) {
            return Err(Error::InvalidArgument("instant images differ in size".into()));
        }
        stacked.data[i * c * h * w..(i + 1) * c * h * w].copy_from_slice(f.data());
    }
    let mut out = resize_bilinear(&stacked, size, size);
    out.data.iter_mut().for_each(|v| *v = 2.0 * *v - 1.0);
    Ok(out)
}

/// Predicted stacks on the tape, at `height × width`.
pub struct PredictedStacks {
    pub ratios: Var,
    pub accum: Var,
}

/// Offsets → constrained stacks, following the heads' output conventions:
/// `A = fix(A_norm + tanh(a) / N)` and `W = softmax(W_norm + w)`.
pub fn stacks_on_tape(tape: &mut Tape, net: &PredictorNet, vars: &NetVars, input: Var, height: usize, width: usize) -> Result<PredictedStacks> {
    let n = net.config.n_instants as f64;
    let (a_raw, w_raw) = forward_on_tape(tape, net, vars, input)?;
    let a = tape.tanh(a_raw);
    let a = tape.scale(a, 1.0 / n);
    let a = tape.add_scalar(a, 1.0 / n);
    let a = tape.min_plane_fix(a);
    let w = tape.add_scalar(w_raw, 1.0 / (n - 1.0));
    let w = tape.channel_softmax(w);
    Ok(PredictedStacks {
        ratios: tape.resize(w, height, width),
        accum: tape.resize(a, height, width),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PredictStats {
    /// Pixels whose accumulation weights left `[0, 1]` after the
    /// minimal-plane fix and were projected back.
    pub projected_pixels: usize,
}

/// Predicts blur parameters for a region from its uniform-ratio instants.
pub fn predict_params(net: &PredictorNet, instants: &[Frame]) -> Result<(BlurParams, PredictStats)> {
    let n = net.config.n_instants;
    if instants.len() != n {
        return Err(Error::InvalidArgument(format!("net expects {n} instants, got {}", instants.len())));
    }
    let (h, w) = (instants[0].height(), instants[0].width());
    if instants[0].channels() != net.config.image_channels {
        return Err(Error::InvalidArgument(format!(
            "net expects {}-channel instants, got {}",
            net.config.image_channels,
            instants[0].channels()
        )));
    }
    let mut tape = Tape::new();
    let vars = NetVars::register(&mut tape, net, false);
    let input = tape.constant(net_input(instants, net.config.input_size)?);
    let stacks = stacks_on_tape(&mut tape, net, &vars, input, h, w)?;
    let ratios = tape.value(stacks.ratios).clone();
    let mut accum = tape.value(stacks.accum).clone();

    let mut stats = PredictStats::default();
    let np = accum.plane_len();
    let mut out_of_range = false;
    for p in 0..np {
        if (0..n).any(|i| !(0.0..=1.0).contains(&accum.data[i * np + p])) {
            stats.projected_pixels += 1;
            out_of_range = true;
        }
    }
    if out_of_range {
        accum = project_stack(&accum);
    }
    let params = BlurParams {
        ratios: MotionRatios(ratios),
        accum: AccumWeights(accum),
    };
    let worst = params.constraint_violation();
    if !(worst <= 1e-3) {
        return Err(Error::Internal(format!("predicted stacks violate the constraints by {worst:.3e}")));
    }
    Ok((params, stats))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub adversarial: f64,
    pub natural: f64,
    pub total: f64,
}

/// Records `L_adv + λ·L_natural` for one region pair; returns the total node.
#[allow(clippy::too_many_arguments)]
pub fn total_loss_on_tape(
    tape: &mut Tape,
    net: &PredictorNet,
    vars: &NetVars,
    model: &TrackerModel,
    cur: &Frame,
    prev: &Frame,
    flow: &FlowField,
    target: &AttackTarget,
    lambda: f64,
) -> Result<(Var, LossParts)> {
    let n = net.config.n_instants;
    let (h, w) = (cur.height(), cur.width());
    let uniform = uniform_params(n, h, w)?;
    let instants = instant_images(prev, cur, flow, &uniform.ratios)?;
    let input = tape.constant(net_input(&instants, net.config.input_size)?);
    let stacks = stacks_on_tape(tape, net, vars, input, h, w)?;
    let blurred = blur_on_tape(tape, cur, prev, flow, stacks.ratios, stacks.accum)?;
    let resp = respond_on_tape(tape, model, blurred)?;
    let adv = adversarial_loss_on_tape(tape, resp, target)?;
    let a_norm = tape.constant(uniform.accum.0);
    let dev = tape.sub(stacks.accum, a_norm)?;
    let norms = tape.plane_norms(dev);
    let nat = tape.sum(norms);
    let weighted = tape.scale(nat, lambda);
    let total = tape.add(adv, weighted)?;
    let parts = LossParts {
        adversarial: tape.value(adv).data[0],
        natural: tape.value(nat).data[0],
        total: tape.value(total).data[0],
    };
    Ok((total, parts))
}

/// Loss value only (no gradients needed).
#[allow(clippy::too_many_arguments)]
pub fn total_loss(
    net: &PredictorNet,
    model: &TrackerModel,
    cur: &Frame,
    prev: &Frame,
    flow: &FlowField,
    target: &AttackTarget,
    lambda: f64,
) -> Result<LossParts> {
    let mut tape = Tape::new();
    let vars = NetVars::register(&mut tape, net, false);
    Ok(total_loss_on_tape(&mut tape, net, &vars, model, cur, prev, flow, target, lambda)?.1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OsOutcome {
    pub blurred: Frame,
    pub params: BlurParams,
    pub stats: PredictStats,
}

/// Single forward pass on already-cropped regions with a fixed flow.
pub fn os_attack_region(net: &PredictorNet, cur: &Frame, prev: &Frame, flow: &FlowField) -> Result<OsOutcome> {
    let n = net.config.n_instants;
    let uniform = uniform_params(n, cur.height(), cur.width())?;
    let instants = instant_images(prev, cur, flow, &uniform.ratios)?;
    let (params, stats) = predict_params(net, &instants)?;
    let blurred = blur(cur, prev, flow, &params)?;
    Ok(OsOutcome { blurred, params, stats })
}
