//! `aba` subcommands.
//!
//! Settings are resolved in three layers: built-in defaults, the optional
//! `--config` file, then command-line flags. `--dump-config` prints the
//! resolved settings instead of running.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use aba_core::attack_op::{attack_region_with, pipeline_gradient_error, prepare_regions, FlowSource};
use aba_core::attack_os::os_attack_region;
use aba_core::blur::{blur, norm_blur};
use aba_core::bench::AttackKind;
use aba_core::flow::estimate_flow;
use aba_core::tracker::{init, paste_region, BBox};
use aba_core::{FlowField, Frame};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use crate::config::RunConfig;
use crate::csvio::{write_bench, write_op_stats, write_train_log, TRAIN_LOG_FILE};
use crate::error::{Error, Result};
use crate::formats::{read_flow, read_net, read_params, write_flow, write_net, write_params};
use crate::imageio::{read_image, write_image};
use crate::report::emit_report;
use crate::runner::{bench_sequences, run_bench, suite_sequences, train_predictor};
use crate::sequence::{parse_box_line, save_sequence};

pub const CHECKPOINT_FILE: &str = "predictor.jama";
pub const CONFIG_FILE: &str = "config.txt";
/// Gradient check pass mark.
pub const GRADCHECK_TOLERANCE: f64 = 1e-3;

#[derive(Args, Debug, Default)]
struct Common {
    /// `key = value` settings file.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for per-sequence work.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Extra `key=value` override; may repeat.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Print the resolved settings and exit.
    #[arg(long, global = true)]
    dump_config: bool,
}

#[derive(Args, Debug)]
struct FramePair {
    #[arg(long)]
    prev: PathBuf,
    #[arg(long)]
    cur: PathBuf,
    /// FLOWv1 file with the prev→cur flow; estimated when absent.
    #[arg(long)]
    flow: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum BlurMode {
    /// Uniform ratios and weights.
    Norm,
    /// Parameters from `--params`.
    Params,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Estimate optical flow between two frames.
    Flow {
        #[arg(long)]
        prev: PathBuf,
        #[arg(long)]
        cur: PathBuf,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        levels: Option<usize>,
        /// Output FLOWv1 file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Synthesize a blurred frame.
    Blur {
        #[command(flatten)]
        pair: FramePair,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long, value_enum, default_value = "norm")]
        mode: BlurMode,
        /// BPRMv1 parameter file for `--mode params`.
        #[arg(long)]
        params: Option<PathBuf>,
        /// Output image.
        #[arg(long)]
        out: PathBuf,
    },
    /// Iterative blur attack on one frame.
    AttackOp {
        #[command(flatten)]
        pair: FramePair,
        /// Target box in `prev` as top-left `x,y,w,h`.
        #[arg(long)]
        bbox: String,
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long)]
        n: Option<usize>,
        /// Output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// One-step blur attack on one frame with a trained predictor.
    AttackOs {
        #[command(flatten)]
        pair: FramePair,
        #[arg(long)]
        bbox: String,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the one-step predictor on generated scenes.
    Train {
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        scenes: Option<usize>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run attacks over the benchmark suite and write metrics.
    Bench {
        #[arg(long)]
        scenes: Option<usize>,
        /// Comma-separated attack labels, or `all`.
        #[arg(long)]
        attack: Option<String>,
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long)]
        n: Option<usize>,
        /// Directory of sequence directories to use instead of the suite.
        #[arg(long)]
        sequences: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Record attack latency.
        #[arg(long)]
        timing: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check pipeline gradients against finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 8)]
        size: usize,
        #[arg(long, default_value_t = 3)]
        n: usize,
        #[arg(long, default_value_t = 1e-3)]
        eps: f64,
    },
    /// Write the benchmark scenes as sequence directories.
    GenScenes {
        #[arg(long)]
        scenes: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summary table and plots of a bench output directory.
    Report {
        /// Results directory.
        dir: PathBuf,
    },
}

#[derive(Parser, Debug)]
#[command(name = "aba", version, about = "Adversarial motion blur against template trackers")]
struct Root {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

fn init_logging() {
    let filter = std::env::var("ABA_LOG").unwrap_or_else(|_| "info".into());
    let _ = env_logger::Builder::new()
        .parse_filters(&filter)
        .target(env_logger::Target::Stderr)
        .format_timestamp(None)
        .try_init();
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    init_logging();
    let root = match Root::try_parse_from(argv) {
        Ok(r) => r,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(root) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn push<T: ToString>(out: &mut Vec<(&'static str, String)>, key: &'static str, v: &Option<T>) {
    if let Some(v) = v {
        out.push((key, v.to_string()));
    }
}

fn path_str(p: &Option<PathBuf>) -> Option<String> {
    p.as_ref().map(|p| p.display().to_string())
}

fn resolve(common: &Common, flags: Vec<(&'static str, String)>) -> Result<RunConfig> {
    let mut overrides: Vec<(String, String)> = Vec::new();
    if let Some(seed) = common.seed {
        overrides.push(("seed".into(), seed.to_string()));
    }
    if let Some(jobs) = common.jobs {
        overrides.push(("jobs".into(), jobs.to_string()));
    }
    overrides.extend(flags.into_iter().map(|(k, v)| (k.to_string(), v)));
    for kv in &common.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Usage(format!("--set expects KEY=VALUE, got '{kv}'")))?;
        overrides.push((k.trim().to_string(), v.trim().to_string()));
    }
    match &common.config {
        Some(p) => RunConfig::load(p, &overrides),
        None => RunConfig::parse_str_with("", &overrides),
    }
}

fn parse_bbox(s: &str) -> Result<BBox> {
    parse_box_line(s).map_err(|m| Error::Usage(format!("--bbox: {m}")))
}

fn load_pair(pair: &FramePair) -> Result<(Frame, Frame, Option<FlowField>)> {
    let prev = read_image(&pair.prev)?;
    let cur = read_image(&pair.cur)?;
    if !prev.same_dims(&cur) {
        return Err(Error::Usage(format!("{} and {} differ in size or channels", pair.prev.display(), pair.cur.display())));
    }
    let flow = pair.flow.as_deref().map(read_flow).transpose()?;
    if let Some(f) = &flow {
        if (f.height, f.width) != (cur.height(), cur.width()) {
            return Err(Error::Usage(format!("flow is {}x{}, frames are {}x{}", f.height, f.width, cur.height(), cur.width())));
        }
    }
    Ok((prev, cur, flow))
}

fn dispatch(root: Root) -> Result<()> {
    let Root { common, command } = root;
    let mut flags = Vec::new();
    match &command {
        Command::Flow { alpha, iterations, levels, .. } => {
            push(&mut flags, "flow_alpha", alpha);
            push(&mut flags, "flow_iterations", iterations);
            push(&mut flags, "flow_levels", levels);
        }
        Command::Blur { n, .. } => push(&mut flags, "n", n),
        Command::AttackOp { iters, n, out, .. } => {
            push(&mut flags, "iters", iters);
            push(&mut flags, "n", n);
            push(&mut flags, "out", &path_str(out));
        }
        Command::AttackOs { checkpoint, out, .. } => {
            push(&mut flags, "checkpoint", &path_str(checkpoint));
            push(&mut flags, "out", &path_str(out));
        }
        Command::Train { steps, scenes, n, out } => {
            push(&mut flags, "train_steps", steps);
            push(&mut flags, "train_scenes", scenes);
            push(&mut flags, "n", n);
            push(&mut flags, "out", &path_str(out));
        }
        Command::Bench {
            scenes,
            attack,
            iters,
            n,
            sequences,
            checkpoint,
            timing,
            out,
        } => {
            push(&mut flags, "scenes", scenes);
            push(&mut flags, "attacks", attack);
            push(&mut flags, "iters", iters);
            push(&mut flags, "n", n);
            push(&mut flags, "sequences", &path_str(sequences));
            push(&mut flags, "checkpoint", &path_str(checkpoint));
            if *timing {
                flags.push(("timing", "true".into()));
            }
            push(&mut flags, "out", &path_str(out));
        }
        Command::GenScenes { scenes, out } => {
            push(&mut flags, "scenes", scenes);
            push(&mut flags, "out", &path_str(out));
        }
        Command::Gradcheck { .. } | Command::Report { .. } => {}
    }
    let cfg = resolve(&common, flags)?;
    if common.dump_config {
        print!("{}", cfg.dump());
        return Ok(());
    }
    match command {
        Command::Flow { prev, cur, out, .. } => cmd_flow(&cfg, &prev, &cur, &out),
        Command::Blur { pair, mode, params, out, .. } => cmd_blur(&cfg, &pair, mode, params.as_deref(), &out),
        Command::AttackOp { pair, bbox, .. } => cmd_attack(&cfg, &pair, &parse_bbox(&bbox)?, false),
        Command::AttackOs { pair, bbox, .. } => cmd_attack(&cfg, &pair, &parse_bbox(&bbox)?, true),
        Command::Train { .. } => cmd_train(&cfg).map(|_| ()),
        Command::Bench { .. } => cmd_bench(&cfg),
        Command::Gradcheck { size, n, eps } => cmd_gradcheck(&cfg, size, n, eps),
        Command::GenScenes { .. } => cmd_gen_scenes(&cfg),
        Command::Report { dir } => {
            print!("{}", emit_report(&dir)?);
            Ok(())
        }
    }
}

fn cmd_flow(cfg: &RunConfig, prev: &Path, cur: &Path, out: &Path) -> Result<()> {
    let (a, b) = (read_image(prev)?, read_image(cur)?);
    let flow = estimate_flow(&a, &b, &cfg.flow_config())?;
    write_flow(out, &flow)?;
    let n = flow.dx.len() as f64;
    let (mx, my) = (flow.dx.iter().sum::<f64>() / n, flow.dy.iter().sum::<f64>() / n);
    println!("mean flow ({mx:.3}, {my:.3}) px written to {}", out.display());
    Ok(())
}

fn full_flow(cfg: &RunConfig, prev: &Frame, cur: &Frame, given: Option<FlowField>) -> Result<FlowField> {
    match given {
        Some(f) => Ok(f),
        None => Ok(estimate_flow(prev, cur, &cfg.flow_config())?),
    }
}

fn cmd_blur(cfg: &RunConfig, pair: &FramePair, mode: BlurMode, params: Option<&Path>, out: &Path) -> Result<()> {
    let (prev, cur, given) = load_pair(pair)?;
    let flow = full_flow(cfg, &prev, &cur, given)?;
    let blurred = match mode {
        BlurMode::Norm => norm_blur(&cur, &prev, &flow, cfg.n)?,
        BlurMode::Params => {
            let path = params.ok_or_else(|| Error::Usage("--mode params needs --params".into()))?;
            let p = read_params(path)?;
            if (p.height(), p.width()) != (cur.height(), cur.width()) {
                return Err(Error::Usage(format!(
                    "parameters are {}x{}, frames are {}x{}",
                    p.height(),
                    p.width(),
                    cur.height(),
                    cur.width()
                )));
            }
            blur(&cur, &prev, &flow, &p)?
        }
    };
    write_image(out, &blurred)?;
    println!("wrote {}", out.display());
    Ok(())
}

/// Attacks the search region of `cur` around the box given in `prev`, pastes
/// the blurred region into `cur` and writes image, parameters and stats.
fn cmd_attack(cfg: &RunConfig, pair: &FramePair, bbox: &BBox, one_step: bool) -> Result<()> {
    let (prev, cur, given) = load_pair(pair)?;
    let model = init(&prev, bbox, cfg.tracker)?;
    let source = match &given {
        Some(f) => FlowSource::Given(f),
        None => FlowSource::Estimate(cfg.flow_config()),
    };
    let (cur_r, prev_r, flow, tr) = prepare_regions(&cur, &prev, bbox, cfg.context, &source)?;
    std::fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
    let (region, params) = if one_step {
        let path = cfg.checkpoint.as_ref().ok_or_else(|| Error::Usage("attack-os needs --checkpoint".into()))?;
        let net = read_net(path)?;
        let out = os_attack_region(&net, &cur_r, &prev_r, &flow)?;
        println!("predicted parameters, {} pixels projected", out.stats.projected_pixels);
        (out.blurred, out.params)
    } else {
        let out = attack_region_with(&model, &cur_r, &prev_r, &flow, &cfg.op_config(), |_| {})?;
        write_op_stats(&cfg.out.join("op_stats.csv"), 1, &out.stats)?;
        println!(
            "loss {:.6e} -> {:.6e} over {} iterations",
            out.stats.initial_loss(),
            out.stats.final_loss(),
            out.stats.losses.len() - 1
        );
        (out.blurred, out.params)
    };
    write_image(&cfg.out.join("blurred.png"), &paste_region(&cur, &region, tr))?;
    write_image(&cfg.out.join("region.png"), &region)?;
    write_params(&cfg.out.join("params.bprm"), &params)?;
    println!("wrote {}", cfg.out.display());
    Ok(())
}

fn cmd_train(cfg: &RunConfig) -> Result<aba_core::attack_os::PredictorNet> {
    let every = (cfg.train_steps / 20).max(1);
    let (net, log) = train_predictor(cfg, |row| {
        if row.step % every == 0 {
            info!("step {} total {:.4e}", row.step, row.total);
        }
    })?;
    write_net(&cfg.out.join(CHECKPOINT_FILE), &net)?;
    write_train_log(&cfg.out.join(TRAIN_LOG_FILE), &log)?;
    println!("wrote {}", cfg.out.join(CHECKPOINT_FILE).display());
    Ok(net)
}

fn cmd_bench(cfg: &RunConfig) -> Result<()> {
    let seqs = bench_sequences(cfg)?;
    info!("{} sequences", seqs.len());
    let net = if cfg.attacks.contains(&AttackKind::OsAba) {
        Some(match &cfg.checkpoint {
            Some(p) => read_net(p)?,
            None => cmd_train(cfg)?,
        })
    } else {
        None
    };
    let results = run_bench(cfg, &seqs, net.as_ref())?;
    std::fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
    std::fs::write(cfg.out.join(CONFIG_FILE), cfg.dump()).map_err(|e| Error::io(&cfg.out, e))?;
    write_bench(&cfg.out, &results, &seqs, cfg.timing)?;
    print!("{}", emit_report(&cfg.out)?);
    Ok(())
}

fn cmd_gradcheck(cfg: &RunConfig, size: usize, n: usize, eps: f64) -> Result<()> {
    if !(eps > 0.0) {
        return Err(Error::Usage("--eps must be positive".into()));
    }
    let err = pipeline_gradient_error(size, n, eps, cfg.seed).map_err(|e| Error::Usage(e.to_string()))?;
    println!("max relative error: {err:.3e}");
    if err < GRADCHECK_TOLERANCE {
        Ok(())
    } else {
        Err(aba_core::Error::NumericFailure(format!("gradient error {err:.3e} exceeds {GRADCHECK_TOLERANCE:.0e}")).into())
    }
}

fn cmd_gen_scenes(cfg: &RunConfig) -> Result<()> {
    for seq in suite_sequences(cfg.scenes, cfg.jobs)? {
        let dir = cfg.out.join(&seq.name);
        save_sequence(&dir, &seq)?;
        info!("wrote {}", dir.display());
    }
    println!("wrote {} scenes to {}", cfg.scenes, cfg.out.display());
    Ok(())
}
