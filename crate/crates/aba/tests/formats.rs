use std::path::Path;

use aba::formats::{decode_flow, decode_net, decode_params, encode_flow, encode_net, encode_params, read_net, write_net};
use aba::imageio::{read_image, write_image};
use aba::sequence::{load_sequence, save_sequence, GROUNDTRUTH};
use aba::Error;
use aba_core::attack_os::{NetConfig, PredictorNet};
use aba_core::bench::{generate_scene, MotionProgram, SceneConfig};
use aba_core::blur::{project_constraints, AccumWeights, BlurParams, MotionRatios};
use aba_core::{FlowField, Frame, Tensor};
use proptest::prelude::*;

fn p() -> &'static Path {
    Path::new("mem")
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn flow_round_trips_at_single_precision(h in 1usize..6, w in 1usize..6, raw in prop::collection::vec(-1.0f64..1.0, 72)) {
        let bound = h.max(w) as f64;
        let scaled: Vec<f64> = raw.iter().map(|v| v * bound).collect();
        let f = FlowField::new(h, w, scaled[..h * w].to_vec(), scaled[36..36 + h * w].to_vec()).unwrap();
        let bytes = encode_flow(&f);
        prop_assert_eq!(bytes.len(), 16 + 8 * h * w);
        prop_assert_eq!(&bytes[..6], b"FLOWv1");
        let g = decode_flow(p(), &bytes).unwrap();
        for (a, b) in f.dx.iter().chain(&f.dy).zip(g.dx.iter().chain(&g.dy)) {
            prop_assert_eq!(*b, f64::from(*a as f32));
        }
        prop_assert_eq!(encode_flow(&g), bytes);
    }

    #[test]
    fn params_round_trip_and_stay_valid(n in 2usize..6, raw in prop::collection::vec(0.0f64..1.0, 6 * 12)) {
        let params = project_constraints(&BlurParams::new(
            MotionRatios(Tensor::from_vec(n - 1, 3, 4, raw[..(n - 1) * 12].to_vec()).unwrap()),
            AccumWeights(Tensor::from_vec(n, 3, 4, raw[12..12 + n * 12].to_vec()).unwrap()),
        ).unwrap());
        let bytes = encode_params(&params);
        prop_assert_eq!(bytes.len(), 20 + 4 * (2 * n - 1) * 12);
        let back = decode_params(p(), &bytes).unwrap();
        prop_assert_eq!(back.n_instants(), n);
        prop_assert!(back.constraint_violation() < 1e-5);
        prop_assert!(back.accum.0.max_abs_diff(&params.accum.0) < 1e-7);
    }
}

#[test]
fn corrupt_dumps_are_rejected() {
    let f = FlowField::constant(2, 3, 1.0, -1.0);
    let bytes = encode_flow(&f);
    assert!(matches!(decode_flow(p(), &bytes[..bytes.len() - 1]), Err(Error::Format { .. })));
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(decode_flow(p(), &extra).is_err());
    let mut magic = bytes.clone();
    magic[0] = b'X';
    assert!(decode_flow(p(), &magic).is_err());

    // accumulation weights that do not sum to one
    let bad = BlurParams::new(MotionRatios(Tensor::filled(1, 1, 1, 1.0)), AccumWeights(Tensor::filled(2, 1, 1, 0.7))).unwrap();
    assert!(decode_params(p(), &encode_params(&bad)).is_err());
}

#[test]
fn checkpoints_round_trip() {
    let cfg = NetConfig {
        n_instants: 3,
        image_channels: 1,
        input_size: 8,
        widths: vec![2, 3],
    };
    let net = PredictorNet::new(cfg, 7).unwrap();
    let bytes = encode_net(&net);
    assert_eq!(&bytes[..6], b"JAMAv1");
    let back = decode_net(p(), &bytes).unwrap();
    assert_eq!(back.config, net.config);
    for (a, b) in net.flat_params().iter().zip(back.flat_params()) {
        assert_eq!(b, f64::from(*a as f32));
    }
    assert_eq!(encode_net(&back), bytes);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sub/net.jama");
    write_net(&path, &net).unwrap();
    assert_eq!(read_net(&path).unwrap().config, net.config);

    // a header claiming a different layer shape
    let mut wrong = bytes.clone();
    let layer0 = 8 + 4 * (4 + 2 + 1);
    wrong[layer0 + 8] += 1; // cout of the first layer
    assert!(decode_net(p(), &wrong).is_err());
}

#[test]
fn images_round_trip_through_every_format() {
    let dir = tempfile::tempdir().unwrap();
    let gray = Frame::from_fn_gray(5, 7, |y, x| ((3 * x + 5 * y) % 256) as f64 / 255.0);
    for name in ["g.png", "g.pgm"] {
        let path = dir.path().join(name);
        write_image(&path, &gray).unwrap();
        let back = read_image(&path).unwrap();
        assert_eq!(back.channels(), 1);
        assert!(back.max_abs_diff(&gray) < 1e-12, "{name}");
    }
    let rgb = Frame::new(3, 4, 3, (0..36).map(|i| (i * 7 % 256) as f64 / 255.0).collect()).unwrap();
    for name in ["c.png", "c.ppm"] {
        let path = dir.path().join(name);
        write_image(&path, &rgb).unwrap();
        let back = read_image(&path).unwrap();
        assert_eq!(back.channels(), 3);
        assert!(back.max_abs_diff(&rgb) < 1e-12, "{name}");
    }
    assert!(matches!(write_image(&dir.path().join("x.bmp"), &gray), Err(Error::Usage(_))));
    assert!(read_image(&dir.path().join("missing.png")).is_err());
}

fn small_scene() -> aba_core::bench::Sequence {
    let cfg = SceneConfig {
        width: 48,
        height: 40,
        object_w: 10,
        object_h: 8,
        n_frames: 10,
        motion: MotionProgram::Linear { vx: 1.0, vy: 1.0 },
        ..SceneConfig::default()
    };
    generate_scene(&cfg, 3).unwrap()
}

#[test]
fn sequences_round_trip_without_flow() {
    let dir = tempfile::tempdir().unwrap();
    let seq = small_scene();
    let root = dir.path().join("walk");
    save_sequence(&root, &seq).unwrap();
    assert!(root.join("flow/000009.flo").is_file());
    let back = load_sequence(&root).unwrap();
    assert_eq!(back.name, "walk");
    assert_eq!(back.len(), 10);
    assert!(back.gt_flow.is_none());
    for (a, b) in back.gt_boxes.iter().zip(&seq.gt_boxes) {
        assert!((a.cx - b.cx).abs() < 1e-9 && (a.cy - b.cy).abs() < 1e-9 && a.w == b.w);
    }
    for (a, b) in back.frames.iter().zip(&seq.frames) {
        assert!(a.max_abs_diff(b) <= 0.5 / 255.0 + 1e-12);
    }
}

#[test]
fn load_errors_name_file_and_line() {
    let dir = tempfile::tempdir().unwrap();
    let seq = small_scene();
    let root = dir.path().join("s");
    save_sequence(&root, &seq).unwrap();
    let gt = root.join(GROUNDTRUTH);
    let text = std::fs::read_to_string(&gt).unwrap();

    let nine: String = text.lines().take(9).map(|l| format!("{l}\n")).collect();
    std::fs::write(&gt, &nine).unwrap();
    let e = load_sequence(&root).unwrap_err().to_string();
    assert!(e.contains("groundtruth.txt") && e.contains("9 boxes for 10 frames"), "{e}");

    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    lines[3] = "1,2,three,4".into();
    std::fs::write(&gt, lines.join("\n")).unwrap();
    let e = load_sequence(&root).unwrap_err().to_string();
    assert!(e.contains("groundtruth.txt:4"), "{e}");

    let spaced: String = text.lines().map(|l| format!("{}\n", l.replace(',', " , "))).collect();
    std::fs::write(&gt, spaced).unwrap();
    assert_eq!(load_sequence(&root).unwrap().len(), 10);

    std::fs::remove_file(root.join("000001.png")).unwrap();
    let e = load_sequence(&root).unwrap_err().to_string();
    assert!(e.contains("000001.png"), "{e}");
    std::fs::remove_file(&gt).unwrap();
    assert!(load_sequence(&root).unwrap_err().to_string().contains("groundtruth.txt"));
}
