//! End-to-end acceptance run: prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

use std::process::Command;
use std::time::Instant;

use aba::runner::{run_bench, suite_sequences, train_predictor, BenchResults};
use aba::RunConfig;
use aba_core::attack_op::{attack_region, is_attack_frame, pipeline_gradient_error, prepare_regions, FlowSource};
use aba_core::attack_os::{os_attack_region, PredictorNet};
use aba_core::bench::{AttackKind, Sequence};
use aba_core::blur::{accumulate, blur, instant_images, project_constraints, uniform_params, AccumWeights, BlurParams, MotionRatios};
use aba_core::flow::{estimate_flow, FlowConfig};
use aba_core::tracker::{init, FeatureKind};
use aba_core::{FlowField, Frame, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Default)]
struct Tally {
    lines: Vec<(u32, bool, String)>,
}

impl Tally {
    fn record(&mut self, id: u32, name: &str, pass: bool, detail: String) {
        let line = format!("criterion {id:>2} {}: {name}: {detail}", if pass { "PASS" } else { "FAIL" });
        println!("{line}");
        self.lines.push((id, pass, line));
    }
}

fn random_frame(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> Frame {
    Frame::new(c, h, w, (0..c * h * w).map(|_| rng.gen::<f64>()).collect()).unwrap()
}

fn random_params(rng: &mut ChaCha8Rng, n: usize, h: usize, w: usize) -> BlurParams {
    let mut stack = |c: usize| Tensor::from_vec(c, h, w, (0..c * h * w).map(|_| rng.gen_range(0.05..1.0)).collect()).unwrap();
    let raw = BlurParams::new(MotionRatios(stack(n - 1)), AccumWeights(stack(n))).unwrap();
    project_constraints(&raw)
}

fn random_flow(rng: &mut ChaCha8Rng, h: usize, w: usize, amp: f64) -> FlowField {
    let mut plane = || (0..h * w).map(|_| rng.gen_range(-amp..amp)).collect::<Vec<_>>();
    let dx = plane();
    let dy = plane();
    FlowField::new(h, w, dx, dy).unwrap()
}

fn gradient_oracle(t: &mut Tally) {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for seed in 0..5 {
        worst = worst.max(pipeline_gradient_error(8, 3, 1e-3, seed).expect("gradient check runs"));
    }
    let secs = start.elapsed().as_secs_f64();
    t.record(
        1,
        "gradient oracle",
        worst < 1e-3 && secs < 10.0,
        format!("max relative error {worst:.2e} over 5 seeds (< 1e-3), {secs:.2} s (< 10 s)"),
    );
}

fn accumulation_oracle(t: &mut Tally) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for k in 0..100 {
        let n = [2, 3, 5][k % 3];
        let c = if k % 2 == 0 { 1 } else { 3 };
        let frames: Vec<Frame> = (0..n).map(|_| random_frame(&mut rng, c, 8, 8)).collect();
        let accum = random_params(&mut rng, n, 8, 8).accum;
        let fast = accumulate(&frames, &accum).unwrap();
        for ch in 0..c {
            for y in 0..8 {
                for x in 0..8 {
                    let mut s = 0.0;
                    for (i, f) in frames.iter().enumerate() {
                        s += accum.0.at(i, y, x) * f.at(ch, y, x);
                    }
                    worst = worst.max((fast.at(ch, y, x) - s).abs());
                }
            }
        }
    }
    t.record(2, "accumulation oracle", worst < 1e-6, format!("max deviation {worst:.2e} on 100 instances (< 1e-6)"));
}

fn uniform_identity(t: &mut Tally) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut mean_dev, mut still_dev): (f64, f64) = (0.0, 0.0);
    for k in 0..30 {
        let n = 2 + k % 16;
        let prev = random_frame(&mut rng, 1, 12, 12);
        let cur = random_frame(&mut rng, 1, 12, 12);
        let flow = random_flow(&mut rng, 12, 12, 3.0);
        let params = uniform_params(n, 12, 12).unwrap();
        let instants = instant_images(&prev, &cur, &flow, &params.ratios).unwrap();
        let out = blur(&cur, &prev, &flow, &params).unwrap();
        for p in 0..144 {
            let m = instants.iter().map(|f| f.data()[p]).sum::<f64>() / n as f64;
            mean_dev = mean_dev.max((out.data()[p] - m).abs());
        }
        let still = random_frame(&mut rng, 3, 12, 12);
        let any = random_params(&mut rng, n, 12, 12);
        let out = blur(&still, &still, &FlowField::zeros(12, 12), &any).unwrap();
        still_dev = still_dev.max(out.max_abs_diff(&still));
    }
    t.record(
        3,
        "uniform-weights identity",
        mean_dev < 1e-6 && still_dev < 1e-6,
        format!("uniform vs instant mean {mean_dev:.2e}, still scene under random params {still_dev:.2e} (< 1e-6)"),
    );
}

fn flow_sanity(t: &mut Tally) {
    let tex = |x: f64, y: f64| {
        0.5 + 0.2 * (0.35 * x + 0.2 * y).sin() + 0.15 * (0.27 * y - 0.1 * x).cos() + 0.1 * (0.5 * (x + y)).sin() + 0.05 * (0.9 * x - 0.6 * y).cos()
    };
    let shifts = [(0.5, 0.0), (1.0, -1.0), (0.0, 2.0), (-2.0, 1.5), (3.0, 0.0), (0.0, -3.0), (-2.1, -2.1), (2.5, 1.2)];
    let mut worst: f64 = 0.0;
    for (dx, dy) in shifts {
        let prev = Frame::from_fn_gray(64, 64, |y, x| tex(x as f64, y as f64));
        let cur = Frame::from_fn_gray(64, 64, |y, x| tex(x as f64 - dx, y as f64 - dy));
        let f = estimate_flow(&prev, &cur, &FlowConfig::default()).unwrap();
        worst = worst.max(f.mean_endpoint_error(&FlowField::constant(64, 64, dx, dy)));
    }
    t.record(
        10,
        "flow sanity",
        worst < 0.5,
        format!("worst mean endpoint error {worst:.3} px over {} translations up to 3 px (< 0.5)", shifts.len()),
    );
}

fn drop_of(r: &BenchResults, k: AttackKind) -> f64 {
    r.get(k).expect("attack was run").mean.succ_drop
}

fn suite_criteria(t: &mut Tally, cfg: &RunConfig, seqs: &[Sequence], net: &PredictorNet, train_steps: usize) {
    let start = Instant::now();
    let res = run_bench(cfg, seqs, Some(net)).expect("suite run");
    println!("    suite run: {:.0} s", start.elapsed().as_secs_f64());
    for run in &res.runs {
        println!(
            "    {:<12} success AUC {:.3}  drop {:.3}  precision drop {:.3}",
            run.attack.label(),
            run.mean.success_auc,
            run.mean.succ_drop,
            run.mean.prec_drop
        );
    }

    let (mut worst, mut checked) = (0.0f64, 0usize);
    for kind in [AttackKind::OpAba, AttackKind::OpAbaWoW, AttackKind::OpAbaWoA, AttackKind::OsAba] {
        for f in res.get(kind).unwrap().trajectories.iter().flat_map(|t| &t.frames).filter(|f| f.attacked) {
            worst = worst.max(f.constraint_violation);
            checked += 1;
        }
    }
    t.record(
        4,
        "constraint invariant",
        worst <= 1e-5,
        format!("worst violation {worst:.2e} over {checked} attacked frames, every OP iterate and OS output (<= 1e-5)"),
    );

    let stats: Vec<_> = res.get(AttackKind::OpAba).unwrap().trajectories.iter().flat_map(|t| &t.frames).filter_map(|f| f.op.as_ref()).collect();
    let down = stats.iter().filter(|s| s.final_loss() < s.initial_loss()).count();
    let frac = down as f64 / stats.len().max(1) as f64;
    t.record(5, "loss descent", frac >= 0.9 && !stats.is_empty(), format!("{down}/{} attacked frames end below their initial loss ({:.1}% >= 90%)", stats.len(), 100.0 * frac));

    let (op, wo_w, wo_a, nb) = (
        drop_of(&res, AttackKind::OpAba),
        drop_of(&res, AttackKind::OpAbaWoW),
        drop_of(&res, AttackKind::OpAbaWoA),
        drop_of(&res, AttackKind::NormBlur),
    );
    t.record(
        6,
        "efficacy ordering",
        op >= wo_w && wo_w >= wo_a && wo_a >= nb && op >= 0.15 && nb <= 0.05,
        format!("success drops OP {op:.3} >= w/o W {wo_w:.3} >= w/o A {wo_a:.3} >= Norm-Blur {nb:.3}; OP >= 0.15, Norm-Blur <= 0.05"),
    );

    let os = drop_of(&res, AttackKind::OsAba);
    t.record(
        7,
        "one-step efficacy",
        train_steps >= 2000 && os > 3.0 * nb && op >= os,
        format!("after {train_steps} steps: OS drop {os:.3} > 3 x Norm-Blur {:.3}; OP drop {op:.3} >= OS", 3.0 * nb),
    );

    let transfer_cfg = RunConfig {
        transfer: Some(FeatureKind::GradientMagnitude),
        attacks: vec![AttackKind::NormBlur, AttackKind::OpAba],
        ..cfg.clone()
    };
    let tr = run_bench(&transfer_cfg, seqs, None).expect("transfer run");
    let (tr_op, tr_nb) = (drop_of(&tr, AttackKind::OpAba), drop_of(&tr, AttackKind::NormBlur));
    let bar = tr_nb.max(nb);
    t.record(
        9,
        "transfer",
        tr_op > bar,
        format!(
            "OP crafted on intensity NCC, replayed on gradient NCC: drop {tr_op:.3} > Norm-Blur {bar:.3} (max of {tr_nb:.3} on the gradient tracker, {nb:.3} on the intensity tracker)"
        ),
    );
}

/// Times both attacks on identical regions and flow: the search regions of
/// the OP-scheduled frames around the ground-truth box of the previous frame.
fn speed_ratio(t: &mut Tally, cfg: &RunConfig, seqs: &[Sequence], net: &PredictorNet) {
    let op_cfg = cfg.op_config();
    let mut cases = Vec::new();
    for seq in seqs {
        let model = init(&seq.frames[0], &seq.gt_boxes[0], cfg.tracker).unwrap();
        for i in (1..seq.len()).filter(|&i| is_attack_frame(i, op_cfg.attack_every)) {
            let (cur, prev, flow, _) = prepare_regions(
                &seq.frames[i],
                &seq.frames[i - 1],
                &seq.gt_boxes[i - 1],
                cfg.context,
                &FlowSource::Estimate(cfg.flow_config()),
            )
            .unwrap();
            cases.push((model.clone(), cur, prev, flow));
        }
    }
    let (m, c, p, f) = &cases[0];
    attack_region(m, c, p, f, &op_cfg).unwrap();
    os_attack_region(net, c, p, f).unwrap();

    let start = Instant::now();
    for (m, c, p, f) in &cases {
        attack_region(m, c, p, f, &op_cfg).unwrap();
    }
    let op_ms = start.elapsed().as_secs_f64() * 1e3 / cases.len() as f64;
    let start = Instant::now();
    for (_, c, p, f) in &cases {
        os_attack_region(net, c, p, f).unwrap();
    }
    let os_ms = start.elapsed().as_secs_f64() * 1e3 / cases.len() as f64;
    t.record(
        8,
        "speed ratio",
        op_cfg.iterations == 10 && os_ms <= op_ms / 5.0,
        format!("OS {os_ms:.2} ms vs {}-iteration OP {op_ms:.2} ms per frame on {} regions (ratio {:.3} <= 0.2)", op_cfg.iterations, cases.len(), os_ms / op_ms),
    );
}

/// Two full CLI benchmark runs (predictor training included) with the same
/// seed and configuration but different worker counts.
fn determinism(t: &mut Tally) {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, jobs: &str| {
        let out = dir.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_aba"))
            .args(["bench", "--scenes", "3", "--attack", "all", "--iters", "3", "--seed", "5", "--jobs", jobs])
            .args(["--set", "train_steps=30", "--set", "train_scenes=2", "--out"])
            .arg(&out)
            .env("ABA_LOG", "error")
            .stdout(std::process::Stdio::null())
            .status()
            .expect("binary runs");
        assert!(status.success(), "bench exited with {status}");
        std::fs::read(out.join("metrics.csv")).unwrap()
    };
    let a = run("a", "1");
    let b = run("b", "2");
    t.record(11, "determinism", a == b && !a.is_empty(), format!("metrics.csv of two runs: {} bytes, identical = {}", a.len(), a == b));
}

fn main() {
    let mut t = Tally::default();
    gradient_oracle(&mut t);
    accumulation_oracle(&mut t);
    uniform_identity(&mut t);
    flow_sanity(&mut t);

    let cfg = RunConfig::default();
    let seqs = suite_sequences(20, 1).expect("suite generates");
    let start = Instant::now();
    let (net, log) = train_predictor(&cfg, |_| {}).expect("predictor trains");
    println!("    trained {} steps in {:.0} s", log.rows.len(), start.elapsed().as_secs_f64());
    suite_criteria(&mut t, &cfg, &seqs, &net, log.rows.len());
    speed_ratio(&mut t, &cfg, &seqs, &net);
    determinism(&mut t);

    t.lines.sort_by_key(|l| l.0);
    println!("\nsummary:");
    for (_, _, line) in &t.lines {
        println!("{line}");
    }
    let failed: Vec<u32> = t.lines.iter().filter(|l| !l.1).map(|l| l.0).collect();
    if failed.is_empty() {
        println!("all {} criteria pass", t.lines.len());
    } else {
        println!("failing criteria: {failed:?}");
        std::process::exit(1);
    }
}
