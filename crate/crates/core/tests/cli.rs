use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nircolor::config::KeyValues;
use nircolor::metrics::{rmse, MetricReport};
use nircolor::nn::InitScheme;
use nircolor::postprocess::{add_details, joint_bilateral, BilateralParams};
use nircolor::synthetic::{affine_set, sweep_set, write_dataset};
use nircolor::topology::{build_model, save_model};
use nircolor::{decompose, load_image, DecomposeParams, TopologySpec};

fn nirc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nirc")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn toy_model(dir: &Path) -> PathBuf {
    let spec: TopologySpec = "net-1-9-2-bp".parse().unwrap();
    let mut model = build_model::<f32>(spec, 9, InitScheme::He, 5).unwrap();
    for b in model.fusion.bias.iter_mut() {
        *b = 0.4;
    }
    let path = dir.join("toy.nirc");
    save_model(&model, &path).unwrap();
    path
}

#[test]
fn roi_and_gap_print_numbers() {
    let o = nirc(&["roi", "--nc", "12", "--np", "3"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).trim(), "98");
    let o = nirc(&["gap", "--np", "3"]);
    assert_eq!(stdout(&o).trim(), "8");
}

#[test]
fn failures_map_to_exit_codes() {
    let o = nirc(&["roi", "--nc", "12", "--np", "3", "--bogus"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("Usage"));
    assert!(stderr(&o).lines().any(|l| l.starts_with("error: kind=usage exit=1 msg=")));

    let o = nirc(&["eval", "--metric", "rmse", "--pred", "/nonexistent/a", "--target", "/nonexistent/b"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("kind=io exit=2"));

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "no_such_key = 1\n").unwrap();
    let o = nirc(&["train", "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("kind=config"));
}

#[test]
fn decompose_writes_layers_and_remap() {
    let dir = tempfile::tempdir().unwrap();
    let samples = affine_set(1, 40, 30, 2);
    write_dataset(&samples, dir.path(), 16).unwrap();
    let input = dir.path().join("nir").join("affine_000.png");
    let prefix = dir.path().join("out").join("d");
    let o = nirc(&["decompose", "--input", s(&input), "--output-prefix", s(&prefix), "--window", "9"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let nir = load_image(&input, None).unwrap();
    let d = decompose(&nir, DecomposeParams { window: 9, epsilon: 1e-4 }).unwrap();
    let tex = load_image(prefix.with_extension("tex.png"), None).unwrap();
    let det = load_image(prefix.with_extension("det.png"), None).unwrap();
    for i in 0..nir.data().len() {
        let t = (d.texture.data()[i] * 0.1 + 0.5).clamp(0.0, 1.0);
        assert!((tex.data()[i] - t).abs() <= 1.0 / 65535.0);
        assert!((det.data()[i] - (d.detail.data()[i] * 0.5 + 0.5)).abs() <= 1.0 / 65535.0);
    }
    let remap = KeyValues::load(prefix.with_extension("remap.txt")).unwrap();
    assert_eq!(remap.get::<f32>("tex_scale").unwrap(), Some(0.1));
    assert_eq!(remap.get::<f32>("det_offset").unwrap(), Some(0.5));
    let manifest = KeyValues::load(prefix.with_extension("manifest")).unwrap();
    assert_eq!(manifest.raw("subcommand"), Some("decompose"));
    assert_eq!(manifest.raw("window"), Some("9"));
}

#[test]
fn colorize_then_eval_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(&affine_set(3, 48, 40, 4), dir.path(), 16).unwrap();
    let model = toy_model(dir.path());
    let out = dir.path().join("pred");
    let o = nirc(&[
        "colorize", "--model", s(&model), "--input", s(&dir.path().join("nir")), "--output", s(&out),
        "--sigma-g", "5", "--sigma-f", "0.05",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));

    let loaded = nircolor::topology::load_model(&model, None).unwrap();
    let params = DecomposeParams { window: 9, epsilon: 1e-4 };
    let bp = BilateralParams::new(5.0, 0.05).unwrap();
    let mut scores = Vec::new();
    for i in 0..3 {
        let name = format!("affine_{i:03}");
        let nir = load_image(dir.path().join("nir").join(format!("{name}.png")), None).unwrap();
        let raw = nircolor::inference::colorize_raw_fast(&loaded, &nir, params).unwrap().image;
        let want = add_details(&joint_bilateral(&raw, &nir, bp).unwrap(), &decompose(&nir, params).unwrap().detail, 1.0).unwrap();
        let got = load_image(out.join(format!("{name}.png")), None).unwrap();
        let diff = got.data().iter().zip(want.data()).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
        assert!(diff <= 0.5 / 65535.0 + 1e-6, "{name}: {diff}");
        let target = load_image(dir.path().join("rgb").join(format!("{name}.png")), None).unwrap();
        scores.push((name, rmse(&got, &target).unwrap()));
    }
    let csv_path = dir.path().join("scores.csv");
    let o = nirc(&["eval", "--metric", "rmse", "--pred", s(&out), "--target", s(&dir.path().join("rgb")), "--output", s(&csv_path)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(&csv_path).unwrap();
    assert_eq!(csv, MetricReport::from_scores(scores).to_csv("rmse"));
    assert!(csv_path.with_extension("csv.manifest").exists());
}

#[test]
fn thread_count_does_not_change_outputs() {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(&affine_set(2, 40, 36, 8), dir.path(), 16).unwrap();
    let model = toy_model(dir.path());
    let mut outputs = Vec::new();
    for threads in ["1", "3"] {
        let out = dir.path().join(format!("pred{threads}"));
        let o = nirc(&[
            "--threads", threads, "colorize", "--model", s(&model), "--input", s(&dir.path().join("nir")),
            "--output", s(&out), "--raw-output", s(&dir.path().join(format!("raw{threads}"))),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        let bytes: Vec<Vec<u8>> =
            ["affine_000.png", "affine_001.png"].iter().map(|f| std::fs::read(out.join(f)).unwrap()).collect();
        let e = nirc(&["--threads", threads, "eval", "--metric", "scielab", "--pred", s(&out), "--target", s(&dir.path().join("rgb"))]);
        assert!(e.status.success());
        outputs.push((bytes, stdout(&e)));
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn sweep_emits_one_row_per_setting() {
    let dir = tempfile::tempdir().unwrap();
    let samples = sweep_set(2, 40, 32, 1, DecomposeParams { window: 9, epsilon: 1e-4 }).unwrap();
    write_dataset(&samples, dir.path(), 8).unwrap();
    let o = nirc(&[
        "sweep", "--nir", s(&dir.path().join("nir")), "--target", s(&dir.path().join("rgb")),
        "--raw", s(&dir.path().join("raw")), "--sigma-g", "5,17", "--sigma-f", "0.005,0.08", "--window", "9",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], nircolor::cli::SWEEP_HEADER);
    assert_eq!(lines.len(), 5);
    assert!(lines[1].starts_with("5,0.005,"));
    assert!(lines[4].starts_with("17,0.08,"));
}

#[test]
fn train_is_reproducible_from_its_manifest() {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(&affine_set(4, 40, 40, 3), dir.path(), 16).unwrap();
    let cfg = dir.path().join("train.cfg");
    let first = dir.path().join("a.nirc");
    std::fs::write(
        &cfg,
        format!(
            "nir_dir = {}\nrgb_dir = {}\ntopology = net-1-9-2-bp\nwindow = 9\nepochs = 6\npatches_per_epoch = 4\nimages_per_epoch = 2\ncheckpoint_every = 0\nseed = 11\n",
            s(&dir.path().join("nir")),
            s(&dir.path().join("rgb"))
        ),
    )
    .unwrap();
    let o = nirc(&["train", "--config", s(&cfg), "--output", s(&first), "--log-every", "0"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let history = std::fs::read_to_string(first.with_extension("nirc.history.csv")).unwrap();
    assert_eq!(history.lines().next(), Some("epoch,lr,train_mse,val_mse"));
    assert_eq!(history.lines().count(), 7);

    let manifest = first.with_extension("nirc.manifest");
    let second = dir.path().join("b.nirc");
    let o = nirc(&[
        "train", "--config", s(&manifest), "--output", s(&second), "--set",
        &format!("history={}", s(&dir.path().join("b.csv"))), "--log-every", "0",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(std::fs::read(&first).unwrap(), std::fs::read(&second).unwrap());
}
