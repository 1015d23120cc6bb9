//! Benchmark driver: scene generation, predictor training and parallel
//! tracking runs over a set of sequences.

use std::time::Instant;

use aba_core::attack_os::{build_dataset, train_with, PredictorNet, TrainLog, TrainRow};
use aba_core::bench::{
    generate_scene, report_drops, run_tracking, suite_manifest, training_manifest, AttackKind, Clock, FrameRecord, MetricsReport, NoClock,
    RunFailure, Sequence, Trajectory,
};
use log::{info, warn};
use rayon::prelude::*;

use crate::config::{FlowSourceKind, RunConfig};
use crate::error::{Error, Result};
use crate::sequence::{load_sequence, sequence_dirs};

/// Wall-clock milliseconds since construction.
#[derive(Debug, Clone, Copy)]
pub struct StdClock(Instant);

impl StdClock {
    pub fn new() -> Self {
        StdClock(Instant::now())
    }
}

impl Default for StdClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for StdClock {
    fn now_ms(&self) -> f64 {
        self.0.elapsed().as_secs_f64() * 1e3
    }
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Usage(format!("cannot start {jobs} worker threads: {e}")))
}

/// The first `n` frozen suite scenes.
pub fn suite_sequences(n: usize, jobs: usize) -> Result<Vec<Sequence>> {
    let specs = suite_manifest(n);
    let seqs = pool(jobs)?.install(|| {
        specs
            .par_iter()
            .map(|s| generate_scene(&s.config, s.seed).map(|mut q| {
                q.name = s.name.clone();
                q
            }))
            .collect::<aba_core::Result<Vec<_>>>()
    })?;
    Ok(seqs)
}

/// Sequences a benchmark runs on: the directory named by `sequences`, or
/// the generated suite.
pub fn bench_sequences(cfg: &RunConfig) -> Result<Vec<Sequence>> {
    match &cfg.sequences {
        Some(root) => {
            if cfg.flow_source == FlowSourceKind::GroundTruth {
                return Err(Error::Usage("sequences loaded from disk have no ground-truth flow; use flow_source = estimate".into()));
            }
            let dirs = sequence_dirs(root)?;
            if dirs.is_empty() {
                return Err(Error::format(root, None, "no sequence directories found"));
            }
            dirs.iter().map(|d| load_sequence(d)).collect()
        }
        None => suite_sequences(cfg.scenes, cfg.jobs),
    }
}

/// Trains a predictor on generated training scenes (disjoint from the
/// suite) for `cfg.train_steps` steps.
pub fn train_predictor(cfg: &RunConfig, on_step: impl FnMut(&TrainRow)) -> Result<(PredictorNet, TrainLog)> {
    let specs = training_manifest(cfg.train_scenes);
    let seqs: Vec<Sequence> = pool(cfg.jobs)?.install(|| {
        specs
            .par_iter()
            .map(|s| generate_scene(&s.config, s.seed))
            .collect::<aba_core::Result<Vec<_>>>()
    })?;
    let flow = cfg.flow_config();
    let flow = match cfg.flow_source {
        FlowSourceKind::Estimate => Some(&flow),
        FlowSourceKind::GroundTruth => None,
    };
    info!("building {} training pairs", seqs.len() * cfg.pairs_per_sequence);
    let data = build_dataset(&seqs, cfg.pairs_per_sequence, cfg.context, flow, cfg.tracker, cfg.loss, cfg.seed)?;
    let channels = seqs[0].frames[0].channels();
    let mut net = PredictorNet::new(cfg.net_config(channels), cfg.seed)?;
    info!("training {} parameters for {} steps", net.param_count(), cfg.train_steps);
    let log = train_with(&mut net, &data, &cfg.train_config(), on_step)?;
    Ok((net, log))
}

#[derive(Debug, Clone)]
pub struct AttackRun {
    pub attack: AttackKind,
    pub trajectories: Vec<Trajectory>,
    /// Per-sequence reports with drops against the clean run.
    pub reports: Vec<MetricsReport>,
    pub mean: MetricsReport,
}

#[derive(Debug, Clone)]
pub struct BenchResults {
    /// One entry per attack in table order; the clean run comes first.
    pub runs: Vec<AttackRun>,
}

impl BenchResults {
    pub fn get(&self, attack: AttackKind) -> Option<&AttackRun> {
        self.runs.iter().find(|r| r.attack == attack)
    }
}

/// Completes a trajectory cut short by a tracking failure: the remaining
/// frames keep the last prediction, so the failure counts against the run.
fn pad_failure(seq: &Sequence, fail: RunFailure) -> Result<Trajectory> {
    let RunFailure { mut partial, error } = fail;
    let Some(last) = partial.frames.last().map(|f| f.bbox) else {
        return Err(error.into());
    };
    warn!("{} / {}: stopped at frame {}: {error}", seq.name, partial.attack, partial.frames.len());
    while partial.frames.len() < seq.len() {
        partial.frames.push(FrameRecord {
            bbox: last,
            attacked: false,
            latency_ms: 0.0,
            op: None,
            constraint_violation: 0.0,
        });
    }
    Ok(partial)
}

/// Runs the clean baseline and every attack in `cfg.attacks` over `seqs`.
/// Results do not depend on `cfg.jobs`.
pub fn run_bench(cfg: &RunConfig, seqs: &[Sequence], net: Option<&PredictorNet>) -> Result<BenchResults> {
    let mut attacks: Vec<AttackKind> = AttackKind::ALL
        .into_iter()
        .filter(|k| *k == AttackKind::None || cfg.attacks.contains(k))
        .collect();
    attacks.dedup();
    if attacks.contains(&AttackKind::OsAba) && net.is_none() {
        return Err(Error::Usage("os-aba needs a trained predictor".into()));
    }
    let bench = cfg.bench_config();
    let work: Vec<(AttackKind, usize)> = attacks.iter().flat_map(|&a| (0..seqs.len()).map(move |i| (a, i))).collect();
    let trajectories = pool(cfg.jobs)?.install(|| {
        work.par_iter()
            .map(|&(attack, i)| {
                let seq = &seqs[i];
                let clock: Box<dyn Clock> = if cfg.timing { Box::new(StdClock::new()) } else { Box::new(NoClock) };
                let out = match run_tracking(seq, attack, net, &bench, clock.as_ref()) {
                    Ok(t) => Ok(t),
                    Err(f) => pad_failure(seq, f),
                };
                info!("{} / {} done", seq.name, attack);
                out
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let mut runs = Vec::with_capacity(attacks.len());
    for (k, &attack) in attacks.iter().enumerate() {
        let trajs = trajectories[k * seqs.len()..(k + 1) * seqs.len()].to_vec();
        let mut reports = Vec::with_capacity(seqs.len());
        for (t, seq) in trajs.iter().zip(seqs) {
            let ms = if cfg.timing { t.ms_per_frame() } else { 0.0 };
            reports.push(MetricsReport::single(seq.name.clone(), &t.boxes(), &seq.gt_boxes, ms)?);
        }
        runs.push(AttackRun {
            attack,
            trajectories: trajs,
            mean: MetricsReport::mean(&reports)?,
            reports,
        });
    }
    let base = runs[0].clone();
    for run in &mut runs {
        for (r, b) in run.reports.iter_mut().zip(&base.reports) {
            *r = report_drops(b, r)?;
        }
        run.mean = report_drops(&base.mean, &run.mean)?;
    }
    Ok(BenchResults { runs })
}
