//! Flat `key = value` run configuration shared by every subcommand.
//!
//! Files hold one setting per line; `#` starts a comment. Unknown keys and
//! out-of-range values are rejected when the file is parsed, and
//! [`RunConfig::dump`] writes text that parses back to the same value.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use aba_core::attack_op::{LossKind, OpAttackConfig};
use aba_core::attack_os::{NetConfig, TrainConfig};
use aba_core::bench::{AttackKind, BenchConfig, FlowChoice, BENCH_STEP};
use aba_core::flow::FlowConfig;
use aba_core::tracker::{FeatureKind, DEFAULT_CONTEXT};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowSourceKind {
    Estimate,
    GroundTruth,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub jobs: usize,
    pub out: PathBuf,

    pub flow_alpha: f64,
    pub flow_iterations: usize,
    pub flow_levels: usize,
    pub flow_source: FlowSourceKind,

    pub iters: usize,
    pub n: usize,
    pub step_ratios: f64,
    pub step_accum: f64,
    pub attack_every: usize,
    pub loss: LossKind,
    pub chain_prev_blurred: bool,
    pub context: f64,
    pub tracker: FeatureKind,
    pub transfer: Option<FeatureKind>,

    pub scenes: usize,
    pub attacks: Vec<AttackKind>,
    /// Directory of sequence subdirectories replacing the generated suite.
    pub sequences: Option<PathBuf>,
    /// Measure attack latency. Off by default so that metrics files depend
    /// only on seed and configuration.
    pub timing: bool,

    pub lr: f64,
    pub lambda_natural: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub train_steps: usize,
    pub pairs_per_sequence: usize,
    pub train_scenes: usize,
    pub net_input: usize,
    pub net_widths: Vec<usize>,
    pub checkpoint: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let flow = FlowConfig::default();
        let op = OpAttackConfig::default();
        let train = TrainConfig::default();
        let net = NetConfig::default();
        RunConfig {
            seed: 0,
            jobs: 1,
            out: PathBuf::from("results"),
            flow_alpha: flow.smoothness_alpha,
            flow_iterations: flow.iterations,
            flow_levels: flow.pyramid_levels,
            flow_source: FlowSourceKind::Estimate,
            iters: op.iterations,
            n: op.n_instants,
            step_ratios: BENCH_STEP,
            step_accum: BENCH_STEP,
            attack_every: op.attack_every,
            loss: op.loss_kind,
            chain_prev_blurred: op.chain_prev_blurred,
            context: DEFAULT_CONTEXT,
            tracker: FeatureKind::Intensity,
            transfer: None,
            scenes: 20,
            attacks: AttackKind::ALL.to_vec(),
            sequences: None,
            timing: false,
            lr: train.learning_rate,
            lambda_natural: train.lambda_natural,
            beta1: train.beta1,
            beta2: train.beta2,
            adam_eps: train.eps,
            train_steps: train.steps,
            pairs_per_sequence: train.pairs_per_sequence,
            train_scenes: 20,
            net_input: net.input_size,
            net_widths: net.widths,
            checkpoint: None,
        }
    }
}

/// Every accepted key, in dump order.
pub const KEYS: &[&str] = &[
    "seed",
    "jobs",
    "out",
    "flow_alpha",
    "flow_iterations",
    "flow_levels",
    "flow_source",
    "iters",
    "n",
    "step_ratios",
    "step_accum",
    "attack_every",
    "loss",
    "chain_prev_blurred",
    "context",
    "tracker",
    "transfer",
    "scenes",
    "attacks",
    "sequences",
    "timing",
    "lr",
    "lambda_natural",
    "beta1",
    "beta2",
    "adam_eps",
    "train_steps",
    "pairs_per_sequence",
    "train_scenes",
    "net_input",
    "net_widths",
    "checkpoint",
];

fn num<T: std::str::FromStr>(key: &str, v: &str) -> std::result::Result<T, String> {
    v.parse().map_err(|_| format!("{key}: cannot parse '{v}'"))
}

fn finite(key: &str, v: &str) -> std::result::Result<f64, String> {
    let x: f64 = num(key, v)?;
    if x.is_finite() {
        Ok(x)
    } else {
        Err(format!("{key}: '{v}' is not finite"))
    }
}

fn boolean(key: &str, v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("{key}: expected true or false, got '{v}'")),
    }
}

fn feature(key: &str, v: &str) -> std::result::Result<FeatureKind, String> {
    match v {
        "intensity" => Ok(FeatureKind::Intensity),
        "gradient" => Ok(FeatureKind::GradientMagnitude),
        _ => Err(format!("{key}: expected intensity or gradient, got '{v}'")),
    }
}

fn feature_label(k: FeatureKind) -> &'static str {
    match k {
        FeatureKind::Intensity => "intensity",
        FeatureKind::GradientMagnitude => "gradient",
    }
}

fn path_opt(v: &str) -> Option<PathBuf> {
    if v.is_empty() {
        None
    } else {
        Some(PathBuf::from(v))
    }
}

fn list<T>(key: &str, v: &str, item: impl Fn(&str) -> std::result::Result<T, String>) -> std::result::Result<Vec<T>, String> {
    let out: Vec<T> = v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(item).collect::<std::result::Result<_, _>>()?;
    if out.is_empty() {
        return Err(format!("{key}: empty list"));
    }
    Ok(out)
}

fn join<T>(items: &[T], f: impl Fn(&T) -> String) -> String {
    items.iter().map(f).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Sets one key from its text form without validating cross-field bounds.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let v = value.trim();
        match key {
            "seed" => self.seed = num(key, v)?,
            "jobs" => self.jobs = num(key, v)?,
            "out" => self.out = PathBuf::from(v),
            "flow_alpha" => self.flow_alpha = finite(key, v)?,
            "flow_iterations" => self.flow_iterations = num(key, v)?,
            "flow_levels" => self.flow_levels = num(key, v)?,
            "flow_source" => {
                self.flow_source = match v {
                    "estimate" => FlowSourceKind::Estimate,
                    "gt" => FlowSourceKind::GroundTruth,
                    _ => return Err(format!("{key}: expected estimate or gt, got '{v}'")),
                }
            }
            "iters" => self.iters = num(key, v)?,
            "n" => self.n = num(key, v)?,
            "step_ratios" => self.step_ratios = finite(key, v)?,
            "step_accum" => self.step_accum = finite(key, v)?,
            "attack_every" => self.attack_every = num(key, v)?,
            "loss" => {
                self.loss = match v {
                    "l2" => LossKind::L2,
                    "ce" => LossKind::CrossEntropy,
                    _ => return Err(format!("{key}: expected l2 or ce, got '{v}'")),
                }
            }
            "chain_prev_blurred" => self.chain_prev_blurred = boolean(key, v)?,
            "context" => self.context = finite(key, v)?,
            "tracker" => self.tracker = feature(key, v)?,
            "transfer" => self.transfer = if v == "none" { None } else { Some(feature(key, v)?) },
            "scenes" => self.scenes = num(key, v)?,
            "attacks" => {
                self.attacks = if v == "all" {
                    AttackKind::ALL.to_vec()
                } else {
                    list(key, v, |s| s.parse::<AttackKind>().map_err(|e| format!("{key}: {e}")))?
                }
            }
            "sequences" => self.sequences = path_opt(v),
            "timing" => self.timing = boolean(key, v)?,
            "lr" => self.lr = finite(key, v)?,
            "lambda_natural" => self.lambda_natural = finite(key, v)?,
            "beta1" => self.beta1 = finite(key, v)?,
            "beta2" => self.beta2 = finite(key, v)?,
            "adam_eps" => self.adam_eps = finite(key, v)?,
            "train_steps" => self.train_steps = num(key, v)?,
            "pairs_per_sequence" => self.pairs_per_sequence = num(key, v)?,
            "train_scenes" => self.train_scenes = num(key, v)?,
            "net_input" => self.net_input = num(key, v)?,
            "net_widths" => self.net_widths = list(key, v, |s| num(key, s))?,
            "checkpoint" => self.checkpoint = path_opt(v),
            _ => return Err(format!("unknown key '{key}'")),
        }
        Ok(())
    }

    /// Text form of one key, as [`RunConfig::set`] accepts it.
    pub fn get(&self, key: &str) -> Option<String> {
        let p = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        Some(match key {
            "seed" => self.seed.to_string(),
            "jobs" => self.jobs.to_string(),
            "out" => self.out.display().to_string(),
            "flow_alpha" => self.flow_alpha.to_string(),
            "flow_iterations" => self.flow_iterations.to_string(),
            "flow_levels" => self.flow_levels.to_string(),
            "flow_source" => match self.flow_source {
                FlowSourceKind::Estimate => "estimate".into(),
                FlowSourceKind::GroundTruth => "gt".into(),
            },
            "iters" => self.iters.to_string(),
            "n" => self.n.to_string(),
            "step_ratios" => self.step_ratios.to_string(),
            "step_accum" => self.step_accum.to_string(),
            "attack_every" => self.attack_every.to_string(),
            "loss" => match self.loss {
                LossKind::L2 => "l2".into(),
                LossKind::CrossEntropy => "ce".into(),
            },
            "chain_prev_blurred" => self.chain_prev_blurred.to_string(),
            "context" => self.context.to_string(),
            "tracker" => feature_label(self.tracker).into(),
            "transfer" => self.transfer.map(feature_label).unwrap_or("none").into(),
            "scenes" => self.scenes.to_string(),
            "attacks" => join(&self.attacks, |k| k.label().to_string()),
            "sequences" => p(&self.sequences),
            "timing" => self.timing.to_string(),
            "lr" => self.lr.to_string(),
            "lambda_natural" => self.lambda_natural.to_string(),
            "beta1" => self.beta1.to_string(),
            "beta2" => self.beta2.to_string(),
            "adam_eps" => self.adam_eps.to_string(),
            "train_steps" => self.train_steps.to_string(),
            "pairs_per_sequence" => self.pairs_per_sequence.to_string(),
            "train_scenes" => self.train_scenes.to_string(),
            "net_input" => self.net_input.to_string(),
            "net_widths" => join(&self.net_widths, |w| w.to_string()),
            "checkpoint" => p(&self.checkpoint),
            _ => return None,
        })
    }

    /// Parses config text on top of the defaults and validates the result.
    pub fn parse_str(text: &str) -> Result<RunConfig> {
        Self::parse_str_with::<&str, &str>(text, &[])
    }

    /// Like [`RunConfig::parse_str`], with `overrides` applied after the
    /// file and before validation.
    pub fn parse_str_with<K: AsRef<str>, V: AsRef<str>>(text: &str, overrides: &[(K, V)]) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        let mut seen = std::collections::BTreeSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let at = |m: String| Error::Usage(format!("config line {}: {m}", i + 1));
            let (key, value) = line.split_once('=').ok_or_else(|| at(format!("expected 'key = value', got '{line}'")))?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(at(format!("duplicate key '{key}'")));
            }
            cfg.set(key, value).map_err(at)?;
        }
        for (key, value) in overrides {
            cfg.set(key.as_ref(), value.as_ref()).map_err(Error::Usage)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load<K: AsRef<str>, V: AsRef<str>>(path: &Path, overrides: &[(K, V)]) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Usage(format!("{}: {e}", path.display())))?;
        Self::parse_str_with(&text, overrides).map_err(|e| match e {
            Error::Usage(m) => Error::Usage(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn dump(&self) -> String {
        let mut s = String::new();
        for key in KEYS {
            let _ = writeln!(s, "{key} = {}", self.get(key).expect("every listed key has a value"));
        }
        s
    }

    pub fn flow_config(&self) -> FlowConfig {
        FlowConfig {
            smoothness_alpha: self.flow_alpha,
            iterations: self.flow_iterations,
            pyramid_levels: self.flow_levels,
        }
    }

    pub fn op_config(&self) -> OpAttackConfig {
        OpAttackConfig {
            iterations: self.iters,
            step_ratios: self.step_ratios,
            step_accum: self.step_accum,
            n_instants: self.n,
            attack_every: self.attack_every,
            loss_kind: self.loss,
            chain_prev_blurred: self.chain_prev_blurred,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.lr,
            lambda_natural: self.lambda_natural,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
            steps: self.train_steps,
            pairs_per_sequence: self.pairs_per_sequence,
            seed: self.seed,
        }
    }

    pub fn net_config(&self, image_channels: usize) -> NetConfig {
        NetConfig {
            n_instants: self.n,
            image_channels,
            input_size: self.net_input,
            widths: self.net_widths.clone(),
        }
    }

    pub fn bench_config(&self) -> BenchConfig {
        BenchConfig {
            context: self.context,
            tracker: self.tracker,
            op: self.op_config(),
            flow: match self.flow_source {
                FlowSourceKind::Estimate => FlowChoice::Estimate(self.flow_config()),
                FlowSourceKind::GroundTruth => FlowChoice::GroundTruth,
            },
            transfer_to: self.transfer,
        }
    }

    /// Checks every bound the owning modules enforce, plus the driver's own.
    pub fn validate(&self) -> Result<()> {
        let usage = |e: aba_core::Error| Error::Usage(e.to_string());
        self.flow_config().validate().map_err(usage)?;
        self.op_config().validate().map_err(usage)?;
        self.train_config().validate().map_err(usage)?;
        self.net_config(1).validate().map_err(usage)?;
        let bad = |m: &str| Err(Error::Usage(m.into()));
        if self.jobs == 0 {
            return bad("jobs must be at least 1");
        }
        if !(self.context >= 1.5) {
            return bad("context must be at least 1.5");
        }
        if self.scenes == 0 || self.train_scenes == 0 {
            return bad("scenes and train_scenes must be at least 1");
        }
        if self.train_steps == 0 {
            return bad("train_steps must be at least 1");
        }
        if self.out.as_os_str().is_empty() {
            return bad("out must not be empty");
        }
        Ok(())
    }
}
