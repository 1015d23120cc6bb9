use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use aba::formats::read_flow;
use aba::imageio::{read_image, write_image};
use aba::RunConfig;
use aba_core::Frame;

fn aba(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aba"))
        .args(args)
        .env("ABA_LOG", "error")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn frames(dir: &Path) -> (String, String) {
    let f = |dx: f64| Frame::from_fn_gray(48, 48, move |y, x| 0.5 + 0.3 * ((x as f64 - dx) * 0.5).sin() * (y as f64 * 0.4).cos());
    let a = dir.join("a.png");
    let b = dir.join("b.png");
    write_image(&a, &f(0.0)).unwrap();
    write_image(&b, &f(2.0)).unwrap();
    (a.display().to_string(), b.display().to_string())
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&aba(&[])), 1);
    assert_eq!(code(&aba(&["frobnicate"])), 1);
    assert_eq!(code(&aba(&["bench", "--no-such-flag"])), 1);
    assert_eq!(code(&aba(&["bench", "--n", "1", "--dump-config"])), 1);
    assert_eq!(code(&aba(&["bench", "--set", "bogus=3", "--dump-config"])), 1);
    assert_eq!(code(&aba(&["--help"])), 0);
}

#[test]
fn gradcheck_reports_small_error() {
    let o = aba(&["gradcheck", "--size", "8", "--n", "3"]);
    assert_eq!(code(&o), 0);
    let line = stdout(&o);
    let v: f64 = line.trim().rsplit(' ').next().unwrap().parse().unwrap();
    assert!(v < 1e-3, "{line}");
    assert_eq!(code(&aba(&["gradcheck", "--size", "4"])), 1);
}

#[test]
fn config_file_and_flags_layer() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "# comment\nn = 9\niters = 4   # trailing\nseed = 11\n").unwrap();
    let o = aba(&["bench", "--config", s(&cfg), "--iters", "6", "--dump-config"]);
    assert_eq!(code(&o), 0);
    let dumped = stdout(&o);
    let c = RunConfig::parse_str(&dumped).unwrap();
    assert_eq!((c.n, c.iters, c.seed), (9, 6, 11));

    // the dump itself is a config file that reproduces itself
    let again = dir.path().join("again.cfg");
    fs::write(&again, &dumped).unwrap();
    assert_eq!(stdout(&aba(&["bench", "--config", s(&again), "--dump-config"])), dumped);

    fs::write(&cfg, "n = 9\nmystery = 1\n").unwrap();
    let o = aba(&["bench", "--config", s(&cfg), "--dump-config"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));
}

#[test]
fn flow_blur_and_attack_commands() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = frames(dir.path());
    let flo = dir.path().join("f.flo");
    assert_eq!(code(&aba(&["flow", "--prev", &a, "--cur", &b, "--out", s(&flo)])), 0);
    let flow = read_flow(&flo).unwrap();
    let mean = flow.dx.iter().sum::<f64>() / flow.dx.len() as f64;
    assert!((mean - 2.0).abs() < 0.5, "{mean}");

    let out = dir.path().join("blurred.png");
    assert_eq!(code(&aba(&["blur", "--prev", &a, "--cur", &b, "--n", "17", "--mode", "norm", "--out", s(&out)])), 0);
    assert_eq!(read_image(&out).unwrap().width(), 48);
    let o = aba(&["blur", "--prev", &a, "--cur", &b, "--mode", "params", "--out", s(&out)]);
    assert_eq!(code(&o), 1);

    let atk = dir.path().join("atk");
    let o = aba(&["attack-op", "--prev", &a, "--cur", &b, "--flow", s(&flo), "--bbox", "18,18,12,12", "--iters", "3", "--out", s(&atk)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let stats = fs::read_to_string(atk.join("op_stats.csv")).unwrap();
    assert!(stats.starts_with("frame_index,iter,loss,argmax_row,argmax_col\n"));
    assert_eq!(stats.lines().count(), 1 + 4);
    assert!(atk.join("params.bprm").is_file() && atk.join("blurred.png").is_file());

    let o = aba(&["attack-os", "--prev", &a, "--cur", &b, "--bbox", "18,18,12,12", "--checkpoint", s(&dir.path().join("none.jama"))]);
    assert_eq!(code(&o), 2);
    let o = aba(&["blur", "--prev", &a, "--cur", s(&dir.path().join("nope.png")), "--out", s(&out)]);
    assert_eq!(code(&o), 2);
}

#[test]
fn bench_is_reproducible_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, jobs: &str| {
        let out = dir.path().join(name);
        let o = aba(&["bench", "--scenes", "2", "--attack", "op-aba,norm-blur", "--iters", "2", "--n", "5", "--jobs", jobs, "--out", s(&out)]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        out
    };
    let r1 = run("r1", "1");
    let r2 = run("r2", "2");
    let m1 = fs::read(r1.join("metrics.csv")).unwrap();
    assert_eq!(m1, fs::read(r2.join("metrics.csv")).unwrap());
    let text = String::from_utf8(m1).unwrap();
    assert!(text.starts_with("sequence,attack,precision20,success_auc,prec_drop,succ_drop,ms_per_frame\n"));
    assert_eq!(text.lines().count(), 1 + 3 * 3);

    let table = fs::read(r1.join("report.txt")).unwrap();
    let o = aba(&["report", s(&r1)]);
    assert_eq!(code(&o), 0);
    assert_eq!(fs::read(r1.join("report.txt")).unwrap(), table);
    let shown = stdout(&o);
    for row in ["Original", "Norm-Blur", "OP-ABA w/o A", "OP-ABA w/o W", "OP-ABA", "OS-ABA"] {
        assert!(shown.lines().any(|l| l.starts_with(row)), "{row}");
    }
    for png in ["precision.png", "success.png"] {
        let img = read_image(&r1.join(png)).unwrap();
        assert_eq!(img.channels(), 3);
        assert_eq!(fs::read(r1.join(png)).unwrap(), fs::read(r2.join(png)).unwrap());
    }

    let empty = dir.path().join("empty");
    fs::create_dir(&empty).unwrap();
    assert_eq!(code(&aba(&["report", s(&empty)])), 2);
}

#[test]
fn generated_scenes_load_back_for_bench() {
    let dir = tempfile::tempdir().unwrap();
    let scenes = dir.path().join("scenes");
    assert_eq!(code(&aba(&["gen-scenes", "--scenes", "2", "--out", s(&scenes)])), 0);
    assert!(scenes.join("scene02/000040.png").is_file());
    let out = dir.path().join("res");
    let o = aba(&["bench", "--sequences", s(&scenes), "--attack", "norm-blur", "--n", "5", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(fs::read_to_string(out.join("metrics.csv")).unwrap().contains("scene02,norm-blur"));
    let o = aba(&["bench", "--sequences", s(&scenes), "--set", "flow_source=gt", "--out", s(&out)]);
    assert_eq!(code(&o), 1);
}
