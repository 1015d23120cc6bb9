use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use super::Sequence;
use crate::attack_op::{ablation_variant, attack_region_with, is_attack_frame, prepare_regions, FlowSource, Freeze, OpAttackConfig, OpStats};
use crate::attack_os::{os_attack_region, PredictorNet};
use crate::blur::norm_blur;
use crate::error::invalid;
use crate::flow::FlowConfig;
use crate::numerics::Frame;
use crate::tracker::{crop_search_region, init, locate, paste_region, respond, BBox, FeatureKind, TrackerModel, DEFAULT_CONTEXT};
use crate::{Error, Result};

/// Millisecond time source; the core library has no clock of its own.
pub trait Clock {
    fn now_ms(&self) -> f64;
}

/// Clock that always reads zero.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoClock;

impl Clock for NoClock {
    fn now_ms(&self) -> f64 {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AttackKind {
    None,
    NormBlur,
    OpAbaWoA,
    OpAbaWoW,
    OpAba,
    OsAba,
}

impl AttackKind {
    pub const ALL: [AttackKind; 6] = [
        AttackKind::None,
        AttackKind::NormBlur,
        AttackKind::OpAbaWoA,
        AttackKind::OpAbaWoW,
        AttackKind::OpAba,
        AttackKind::OsAba,
    ];

    pub fn label(self) -> &'static str {
        match self {
            AttackKind::None => "none",
            AttackKind::NormBlur => "norm-blur",
            AttackKind::OpAbaWoA => "op-aba-wo-a",
            AttackKind::OpAbaWoW => "op-aba-wo-w",
            AttackKind::OpAba => "op-aba",
            AttackKind::OsAba => "os-aba",
        }
    }

    /// Row title used in summary tables.
    pub fn title(self) -> &'static str {
        match self {
            AttackKind::None => "Original",
            AttackKind::NormBlur => "Norm-Blur",
            AttackKind::OpAbaWoA => "OP-ABA w/o A",
            AttackKind::OpAbaWoW => "OP-ABA w/o W",
            AttackKind::OpAba => "OP-ABA",
            AttackKind::OsAba => "OS-ABA",
        }
    }
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for AttackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AttackKind::ALL
            .into_iter()
            .find(|k| k.label() == s)
            .ok_or_else(|| invalid!("unknown attack '{s}'"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FlowChoice {
    GroundTruth,
    Estimate(FlowConfig),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub context: f64,
    pub tracker: FeatureKind,
    pub op: OpAttackConfig,
    pub flow: FlowChoice,
    /// Replay the crafted regions through a tracker with these features
    /// instead of the white-box one.
    pub transfer_to: Option<FeatureKind>,
}

/// Signed-step sizes used by benchmark runs for both stacks. The per-frame
/// attack defaults barely move the accumulation weights within 10
/// iterations at this parameter scale.
pub const BENCH_STEP: f64 = 0.02;

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            context: DEFAULT_CONTEXT,
            tracker: FeatureKind::Intensity,
            op: OpAttackConfig {
                step_ratios: BENCH_STEP,
                step_accum: BENCH_STEP,
                ..OpAttackConfig::default()
            },
            flow: FlowChoice::Estimate(FlowConfig::default()),
            transfer_to: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub bbox: BBox,
    pub attacked: bool,
    pub latency_ms: f64,
    pub op: Option<OpStats>,
    /// Worst constraint violation over every parameter set produced for the
    /// frame (zero when not attacked).
    pub constraint_violation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub sequence: String,
    pub attack: AttackKind,
    pub frames: Vec<FrameRecord>,
}

impl Trajectory {
    pub fn boxes(&self) -> Vec<BBox> {
        self.frames.iter().map(|f| f.bbox).collect()
    }

    /// Mean latency over attacked frames.
    pub fn ms_per_frame(&self) -> f64 {
        let hits: Vec<f64> = self.frames.iter().filter(|f| f.attacked).map(|f| f.latency_ms).collect();
        if hits.is_empty() {
            0.0
        } else {
            hits.iter().sum::<f64>() / hits.len() as f64
        }
    }
}

/// A run that stopped early; `partial` holds the frames tracked so far.
#[derive(Debug)]
pub struct RunFailure {
    pub partial: Trajectory,
    pub error: Error,
}

fn is_attacked(kind: AttackKind, index: usize, every: usize) -> bool {
    match kind {
        AttackKind::None => false,
        AttackKind::OsAba => index >= 1,
        _ => is_attack_frame(index, every),
    }
}

struct Attacked {
    region: Frame,
    op: Option<OpStats>,
    violation: f64,
}

#[allow(clippy::too_many_arguments)]
fn attack_one(
    kind: AttackKind,
    attacker: &TrackerModel,
    net: Option<&PredictorNet>,
    seq: &Sequence,
    t: usize,
    prev_frame: &Frame,
    prev_bbox: &BBox,
    config: &BenchConfig,
) -> Result<Attacked> {
    let source = match &config.flow {
        FlowChoice::Estimate(cfg) => FlowSource::Estimate(*cfg),
        FlowChoice::GroundTruth => FlowSource::Given(
            seq.gt_flow
                .as_ref()
                .and_then(|f| f.get(t - 1))
                .ok_or_else(|| Error::Unavailable(alloc::format!("sequence '{}' has no ground-truth flow", seq.name)))?,
        ),
    };
    let (cur, prev, flow, _) = prepare_regions(&seq.frames[t], prev_frame, prev_bbox, config.context, &source)?;
    let op_run = |freeze: Freeze| -> Result<Attacked> {
        let cfg = ablation_variant(&config.op, freeze);
        let mut worst: f64 = 0.0;
        let out = attack_region_with(attacker, &cur, &prev, &flow, &cfg, |p| worst = worst.max(p.constraint_violation()))?;
        Ok(Attacked {
            region: out.blurred,
            op: Some(out.stats),
            violation: worst,
        })
    };
    match kind {
        AttackKind::None => Ok(Attacked {
            region: cur,
            op: None,
            violation: 0.0,
        }),
        AttackKind::NormBlur => Ok(Attacked {
            region: norm_blur(&cur, &prev, &flow, config.op.n_instants)?,
            op: None,
            violation: 0.0,
        }),
        AttackKind::OpAba => op_run(Freeze::None),
        AttackKind::OpAbaWoW => op_run(Freeze::Ratios),
        AttackKind::OpAbaWoA => op_run(Freeze::Accum),
        AttackKind::OsAba => {
            let net = net.ok_or_else(|| Error::InvalidArgument("os-aba needs a trained predictor".into()))?;
            let out = os_attack_region(net, &cur, &prev, &flow)?;
            Ok(Attacked {
                region: out.blurred,
                op: None,
                violation: out.params.constraint_violation(),
            })
        }
    }
}

/// Tracks `seq` from its first ground-truth box, attacking frames according
/// to `kind` and the schedule in `config.op`.
pub fn run_tracking(
    seq: &Sequence,
    kind: AttackKind,
    net: Option<&PredictorNet>,
    config: &BenchConfig,
    clock: &dyn Clock,
) -> core::result::Result<Trajectory, RunFailure> {
    let mut traj = Trajectory {
        sequence: seq.name.clone(),
        attack: kind,
        frames: Vec::with_capacity(seq.len()),
    };
    macro_rules! bail {
        ($e:expr) => {
            match $e {
                Ok(v) => v,
                Err(error) => return Err(RunFailure { partial: traj, error }),
            }
        };
    }
    bail!(config.op.validate());
    let first = &seq.frames[0];
    let attacker = bail!(init(first, &seq.gt_boxes[0], config.tracker));
    let victim = match config.transfer_to {
        Some(k) => bail!(init(first, &seq.gt_boxes[0], k)),
        None => attacker.clone(),
    };
    traj.frames.push(FrameRecord {
        bbox: seq.gt_boxes[0],
        attacked: false,
        latency_ms: 0.0,
        op: None,
        constraint_violation: 0.0,
    });
    let (w, h) = (first.width(), first.height());
    let mut emitted = first.clone();
    for t in 1..seq.len() {
        let prev_bbox = traj.frames[t - 1].bbox;
        let attacked = is_attacked(kind, t, config.op.attack_every);
        let (clean_region, tr) = bail!(crop_search_region(&seq.frames[t], &prev_bbox, config.context));
        let mut record = FrameRecord {
            bbox: prev_bbox,
            attacked,
            latency_ms: 0.0,
            op: None,
            constraint_violation: 0.0,
        };
        let region = if attacked {
            let prev_frame = if config.op.chain_prev_blurred { &emitted } else { &seq.frames[t - 1] };
            let start = clock.now_ms();
            let out = bail!(attack_one(kind, &attacker, net, seq, t, prev_frame, &prev_bbox, config));
            record.latency_ms = clock.now_ms() - start;
            record.op = out.op;
            record.constraint_violation = out.violation;
            out.region
        } else {
            clean_region
        };
        let map = bail!(respond(&victim, &region, tr, w, h));
        record.bbox = locate(&map);
        if config.op.chain_prev_blurred {
            emitted = if attacked { paste_region(&seq.frames[t], &region, tr) } else { seq.frames[t].clone() };
        }
        traj.frames.push(record);
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::scene::{generate_scene, MotionProgram, SceneConfig};
    use crate::bench::{success_auc, MetricsReport};

    fn scene() -> Sequence {
        let cfg = SceneConfig {
            width: 80,
            height: 80,
            object_w: 12,
            object_h: 12,
            n_frames: 16,
            motion: MotionProgram::Linear { vx: 2.0, vy: 1.0 },
            camera: (1.0, 0.0),
            ..SceneConfig::default()
        };
        generate_scene(&cfg, 5).unwrap()
    }

    #[test]
    fn labels_round_trip() {
        for k in AttackKind::ALL {
            assert_eq!(k.label().parse::<AttackKind>().unwrap(), k);
        }
        assert!("nope".parse::<AttackKind>().is_err());
    }

    #[test]
    fn clean_run_tracks_and_repeats() {
        let s = scene();
        let cfg = BenchConfig::default();
        let a = run_tracking(&s, AttackKind::None, None, &cfg, &NoClock).unwrap();
        let b = run_tracking(&s, AttackKind::None, None, &cfg, &NoClock).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.frames.len(), s.len());
        let mean_iou: f64 = a.boxes().iter().zip(&s.gt_boxes).map(|(p, g)| p.iou(g)).sum::<f64>() / s.len() as f64;
        assert!(mean_iou > 0.5, "{mean_iou}");
        assert!(success_auc(&a.boxes(), &s.gt_boxes).unwrap() > 0.5);
        let r = MetricsReport::single(s.name.clone(), &a.boxes(), &s.gt_boxes, a.ms_per_frame()).unwrap();
        assert!(r.precision20 > 0.9);
    }

    #[test]
    fn attacked_frames_follow_schedule() {
        let s = scene();
        let cfg = BenchConfig {
            flow: FlowChoice::GroundTruth,
            op: OpAttackConfig {
                n_instants: 5,
                iterations: 2,
                ..OpAttackConfig::default()
            },
            ..BenchConfig::default()
        };
        let t = run_tracking(&s, AttackKind::OpAba, None, &cfg, &NoClock).unwrap();
        let hits: Vec<usize> = t.frames.iter().enumerate().filter(|(_, f)| f.attacked).map(|(i, _)| i).collect();
        assert_eq!(hits, alloc::vec![1, 6, 11]);
        assert!(t.frames.iter().all(|f| f.constraint_violation < 1e-5));
        assert!(t.frames[1].op.as_ref().unwrap().losses.len() == 3);

        let chained = BenchConfig {
            op: OpAttackConfig {
                chain_prev_blurred: true,
                ..cfg.op
            },
            ..cfg.clone()
        };
        assert!(run_tracking(&s, AttackKind::NormBlur, None, &chained, &NoClock).is_ok());
        assert!(run_tracking(&s, AttackKind::OsAba, None, &cfg, &NoClock).is_err());
    }

    #[test]
    fn failure_keeps_partial_trajectory() {
        let mut s = scene();
        s.gt_flow = None;
        let cfg = BenchConfig {
            flow: FlowChoice::GroundTruth,
            ..BenchConfig::default()
        };
        let err = run_tracking(&s, AttackKind::NormBlur, None, &cfg, &NoClock).unwrap_err();
        assert_eq!(err.partial.frames.len(), 1);
        assert!(matches!(err.error, Error::Unavailable(_)));
    }
}
