use alloc::vec::Vec;

use num_traits::Float;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{total_loss_on_tape, NetVars, PredictorNet};
use crate::attack_op::{make_target, prepare_regions, AttackTarget, FlowSource, LossKind};
use crate::bench::Sequence;
use crate::flow::FlowConfig;
use crate::numerics::{FlowField, Frame, Tape};
use crate::tracker::{init, response_values, FeatureKind, TrackerModel};
use crate::{Error, Result};

/// Losses above this (or non-finite) abort training.
const DIVERGENCE: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub lambda_natural: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub steps: usize,
    pub pairs_per_sequence: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 2e-4,
            lambda_natural: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            steps: 2000,
            pairs_per_sequence: 8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.learning_rate.is_finite()
            && self.lambda_natural >= 0.0
            && self.lambda_natural.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.pairs_per_sequence > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig("invalid training configuration".into()))
        }
    }
}

/// Adam over a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps,
            m: alloc::vec![0.0; n],
            v: alloc::vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - Float::powi(self.beta1, self.t);
        let c2 = 1.0 - Float::powi(self.beta2, self.t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.lr * mh / (Float::sqrt(vh) + self.eps);
        }
    }
}

/// One training example: regions cropped around the previous box, their
/// fixed flow, the tracker built from the sequence's first frame, and the
/// target derived from the clean response.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub model: TrackerModel,
    pub cur: Frame,
    pub prev: Frame,
    pub flow: FlowField,
    pub target: AttackTarget,
}

/// Draws `pairs_per_sequence` adjacent pairs from every sequence.
/// `flow: None` uses the sequences' ground-truth motion.
pub fn build_dataset(
    sequences: &[Sequence],
    pairs_per_sequence: usize,
    context: f64,
    flow: Option<&FlowConfig>,
    kind: FeatureKind,
    loss_kind: LossKind,
    seed: u64,
) -> Result<Vec<TrainSample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for seq in sequences {
        let model = init(&seq.frames[0], &seq.gt_boxes[0], kind)?;
        let mut idx: Vec<usize> = (1..seq.len()).collect();
        idx.shuffle(&mut rng);
        idx.truncate(pairs_per_sequence);
        idx.sort_unstable();
        for t in idx {
            let source = match flow {
                Some(cfg) => FlowSource::Estimate(*cfg),
                None => FlowSource::Given(
                    seq.gt_flow
                        .as_ref()
                        .and_then(|f| f.get(t - 1))
                        .ok_or_else(|| Error::Unavailable(alloc::format!("sequence '{}' has no ground-truth flow", seq.name)))?,
                ),
            };
            let (cur, prev, f, _) = prepare_regions(&seq.frames[t], &seq.frames[t - 1], &seq.gt_boxes[t - 1], context, &source)?;
            let clean = response_values(&model, cur.as_tensor())?;
            let (tw, th) = model.template_size();
            let target = make_target(&clean, tw, th, loss_kind);
            out.push(TrainSample {
                model: model.clone(),
                cur,
                prev,
                flow: f,
                target,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainRow {
    pub step: usize,
    pub adversarial: f64,
    pub natural: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub rows: Vec<TrainRow>,
}

impl TrainLog {
    pub fn mean_total(&self, range: core::ops::Range<usize>) -> f64 {
        let rows: Vec<f64> = self.rows.iter().filter(|r| range.contains(&r.step)).map(|r| r.total).collect();
        rows.iter().sum::<f64>() / rows.len().max(1) as f64
    }
}

/// Adam with batch size one over a shuffled cycle of `data`. On divergence
/// the net keeps the weights from before the offending step.
pub fn train(net: &mut PredictorNet, data: &[TrainSample], config: &TrainConfig) -> Result<TrainLog> {
    train_with(net, data, config, |_| {})
}

/// As [`train`], calling `on_step` after every logged step.
pub fn train_with(net: &mut PredictorNet, data: &[TrainSample], config: &TrainConfig, mut on_step: impl FnMut(&TrainRow)) -> Result<TrainLog> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut params = net.flat_params();
    let mut adam = Adam::new(params.len(), config.learning_rate, config.beta1, config.beta2, config.eps);
    let mut log = TrainLog::default();
    for step in 0..config.steps {
        if step % data.len() == 0 {
            order.shuffle(&mut rng);
        }
        let s = &data[order[step % data.len()]];
        let mut tape = Tape::new();
        let vars = NetVars::register(&mut tape, net, true);
        let (loss, parts) = total_loss_on_tape(
            &mut tape,
            net,
            &vars,
            &s.model,
            &s.cur,
            &s.prev,
            &s.flow,
            &s.target,
            config.lambda_natural,
        )?;
        if !parts.total.is_finite() || parts.total > DIVERGENCE {
            return Err(Error::TrainingFailure { step, loss: parts.total });
        }
        let grads = tape.backward(loss)?;
        let mut flat = Vec::with_capacity(params.len());
        for &(w, b) in &vars.layers {
            flat.extend_from_slice(&grads.get(&tape, w).data);
            flat.extend_from_slice(&grads.get(&tape, b).data);
        }
        if flat.iter().any(|g| !g.is_finite()) {
            return Err(Error::TrainingFailure { step, loss: parts.total });
        }
        adam.step(&mut params, &flat);
        net.set_flat_params(&params)?;
        let row = TrainRow {
            step,
            adversarial: parts.adversarial,
            natural: parts.natural,
            total: parts.total,
        };
        on_step(&row);
        log.rows.push(row);
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attack_os::NetConfig;
    use crate::bench::scene::{generate_scene, MotionProgram, SceneConfig};

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut adam = Adam::new(2, 0.1, 0.9, 0.999, 1e-8);
        let mut p = [1.0, -1.0];
        adam.step(&mut p, &[3.0, -0.5]);
        assert!((p[0] - 0.9).abs() < 1e-6);
        assert!((p[1] + 0.9).abs() < 1e-6);
    }

    fn small_data() -> Vec<TrainSample> {
        let cfg = SceneConfig {
            width: 48,
            height: 48,
            object_w: 8,
            object_h: 8,
            n_frames: 10,
            motion: MotionProgram::Linear { vx: 2.0, vy: 1.0 },
            camera: (1.0, 0.0),
            ..SceneConfig::default()
        };
        let seqs = [generate_scene(&cfg, 1).unwrap(), generate_scene(&cfg, 2).unwrap()];
        build_dataset(&seqs, 2, 2.5, None, FeatureKind::Intensity, LossKind::L2, 3).unwrap()
    }

    fn tiny_net() -> PredictorNet {
        PredictorNet::new(
            NetConfig {
                n_instants: 3,
                image_channels: 1,
                input_size: 16,
                widths: alloc::vec![4, 4],
            },
            1,
        )
        .unwrap()
    }

    #[test]
    fn training_is_deterministic() {
        let data = small_data();
        assert_eq!(data.len(), 4);
        let cfg = TrainConfig {
            steps: 6,
            learning_rate: 1e-3,
            ..TrainConfig::default()
        };
        let mut a = tiny_net();
        let mut b = tiny_net();
        let la = train(&mut a, &data, &cfg).unwrap();
        let lb = train(&mut b, &data, &cfg).unwrap();
        assert_eq!(la, lb);
        assert_eq!(a, b);
    }

    #[test]
    fn divergence_keeps_last_weights() {
        let data = small_data();
        let mut net = tiny_net();
        let before = net.clone();
        let mut bad = data[0].clone();
        bad.target.target_map.data[0] = 1e5;
        let err = train(&mut net, &[bad], &TrainConfig { steps: 3, ..TrainConfig::default() }).unwrap_err();
        assert!(matches!(err, Error::TrainingFailure { step: 0, .. }));
        assert_eq!(net, before);
    }
}
