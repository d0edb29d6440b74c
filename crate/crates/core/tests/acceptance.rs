//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod support;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use nircolor::inference::{colorize_raw, colorize_raw_fast};
use nircolor::metrics::{cielab, rmse, scielab};
use nircolor::nn::{InitScheme, Tensor};
use nircolor::postprocess::{joint_bilateral, BilateralParams};
use nircolor::synthetic::{affine_set, intensity_set, sweep_set, write_dataset, SyntheticSample};
use nircolor::topology::{build_model, coherence_gap, model_to_bytes, required_roi, Model};
use nircolor::trainer::{train, TrainConfig, TrainOptions, TrainingPair};
use nircolor::{decompose, DecomposeParams, Image, TopologySpec};
use support::gradcheck;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn max_abs_diff(a: &Image, b: &Image) -> f32 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max)
}

fn c1_topology() -> Outcome {
    let roi = required_roi(12, 3, 3).map_err(|e| e.to_string())?;
    ensure(roi == 98, || format!("required_roi(12,3,3) = {roi}"))?;
    let table = TopologySpec::table();
    ensure(table.len() == 12, || format!("{} topologies", table.len()))?;
    for spec in &table {
        let model: Model<f32> = build_model(*spec, 33, InitScheme::He, 1).map_err(|e| e.to_string())?;
        let side = spec.roi();
        for level in 0..spec.n_levels {
            let input = Tensor::new(1, side, side, vec![0.1; side * side]).map_err(|e| e.to_string())?;
            let out = model.branch_forward(level, input).map_err(|e| e.to_string())?;
            let want = (spec.branch_features(), 1, 1);
            ensure(out.dims() == want, || format!("{spec} level {level}: map {:?}, want {want:?}", out.dims()))?;
        }
    }
    Ok("required_roi(12,3,3)=98; 12 topologies reduce roi patches to 1x1".into())
}

fn c2_gap() -> Outcome {
    for np in 0..6 {
        ensure(coherence_gap(np) == 1 << np, || format!("coherence_gap({np}) = {}", coherence_gap(np)))?;
    }
    for spec in TopologySpec::table().iter().filter(|s| s.n_pool == 3) {
        ensure(spec.coherence_gap() == 8, || format!("{spec}: gap {}", spec.coherence_gap()))?;
    }
    Ok("gap = 2^n_p; 8 for every 3-pool topology".into())
}

fn c3_gradients() -> Outcome {
    let checks: [(&str, fn(u64) -> f64); 6] = [
        ("conv", gradcheck::conv_instance),
        ("relu", gradcheck::relu_instance),
        ("maxpool", gradcheck::pool_instance),
        ("dense", gradcheck::fc_instance),
        ("mse", gradcheck::mse_instance),
        ("end-to-end", gradcheck::end_to_end_instance),
    ];
    let mut worst = 0.0f64;
    for (name, f) in checks {
        for seed in 0..gradcheck::INSTANCES {
            let e = catch_unwind(|| f(seed)).map_err(|p| format!("{name} instance {seed}: {}", panic_text(&p)))?;
            worst = worst.max(e);
        }
    }
    Ok(format!("6 checks x {} instances, worst relative error {worst:.2e}", gradcheck::INSTANCES))
}

fn panic_text(p: &Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default()
}

fn c4_reconstruction() -> Outcome {
    let (w, h) = (61, 47);
    let mut images: Vec<(String, Image)> =
        (0..10).map(|s| (format!("random {s}"), support::random_image(w, h, 1, 100 + s))).collect();
    images.push(("constant".into(), Image::filled(w, h, 1, 0.37).map_err(|e| e.to_string())?));
    images.push(("step".into(), Image::from_fn_gray(w, h, |x, _| if x < w / 2 { 0.1 } else { 0.9 })));
    images.push(("checkerboard".into(), Image::from_fn_gray(w, h, |x, y| if (x + y) % 2 == 0 { 0.0 } else { 1.0 })));
    let mut worst = 0.0f32;
    for (name, img) in &images {
        for window in [3, 9, 33] {
            let d = decompose(img, DecomposeParams { window, epsilon: 1e-4 }).map_err(|e| e.to_string())?;
            let err = max_abs_diff(&d.reconstruct(), img);
            ensure(err < 1e-6, || format!("{name}, window {window}: error {err:e}"))?;
            worst = worst.max(err);
        }
    }
    Ok(format!("13 images x windows {{3,9,33}}, worst error {worst:.1e}"))
}

fn c5_bilateral() -> Outcome {
    let src = support::random_image(32, 32, 3, 11);
    let guide = support::random_image(32, 32, 1, 12);
    let mut worst = 0.0f32;
    for sg in [2.0, 5.0, 9.0] {
        for sf in [0.01, 0.05, 0.2] {
            let p = BilateralParams::new(sg, sf).map_err(|e| e.to_string())?;
            let got = joint_bilateral(&src, &guide, p).map_err(|e| e.to_string())?;
            let want = support::brute_force_bilateral(&src, &guide, sg, sf);
            let d = max_abs_diff(&got, &want);
            ensure(d < 2e-2, || format!("sigma_g {sg}, sigma_f {sf}: max diff {d}"))?;
            worst = worst.max(d);
        }
    }
    Ok(format!("3x3 grid on 32x32, worst max diff {worst:.4}"))
}

fn c6_inference() -> Outcome {
    let spec: TopologySpec = "net-1-9-2".parse().map_err(|e: nircolor::Error| e.to_string())?;
    let mut model: Model<f32> = build_model(spec, 33, InitScheme::He, 3).map_err(|e| e.to_string())?;
    for p in model.params_mut() {
        p.bias.iter_mut().for_each(|b| *b = 0.05);
    }
    let nir = support::random_image(64, 64, 1, 21);
    let params = DecomposeParams { window: 33, epsilon: 1e-4 };
    let slow = colorize_raw(&model, &nir, params).map_err(|e| e.to_string())?;
    let fast = colorize_raw_fast(&model, &nir, params).map_err(|e| e.to_string())?;
    let spread = slow.image.data().iter().fold((f32::MAX, f32::MIN), |(a, b), &v| (a.min(v), b.max(v)));
    ensure(spread.1 - spread.0 > 1e-3, || "network output is constant".into())?;
    let d = max_abs_diff(&slow.image, &fast.image);
    ensure(d < 1e-5, || format!("max diff {d:e}"))?;
    Ok(format!("64x64 net-1-9-2, {} fragments per branch, max diff {d:.1e}", fast.passes))
}

fn pairs_of(samples: &[SyntheticSample], params: DecomposeParams) -> Result<Vec<TrainingPair>, String> {
    samples
        .iter()
        .map(|s| TrainingPair::new(&s.name, s.nir.clone(), s.rgb.clone(), 1, params).map_err(|e| e.to_string()))
        .collect()
}

fn toy_config(spec: &str, epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        spec: spec.parse().expect("valid name"),
        epochs,
        lr: 1e-3,
        patches_per_epoch: 16,
        images_per_epoch: 8,
        seed,
        window: 9,
        checkpoint_every: 0,
        val_every: epochs,
        val_patches: 256,
        ..TrainConfig::default()
    }
}

fn c7_toy_training() -> Outcome {
    let set = affine_set(50, 48, 48, 7);
    let cfg = toy_config("net-1-9-2-bp", 2000, 1);
    let params = cfg.decompose_params();
    let pairs = pairs_of(&set[..40], params)?;

    let short = TrainConfig { epochs: 60, ..cfg.clone() };
    let a = train(&short, &pairs, &TrainOptions::default()).map_err(|e| e.to_string())?;
    let b = train(&short, &pairs, &TrainOptions::default()).map_err(|e| e.to_string())?;
    let bytes = |m: &Model<f32>| model_to_bytes(m).expect("serializable");
    ensure(bytes(&a.model) == bytes(&b.model), || "two runs with the same seed differ".into())?;
    let c = train(&TrainConfig { seed: 2, ..short }, &pairs, &TrainOptions::default()).map_err(|e| e.to_string())?;
    ensure(bytes(&a.model) != bytes(&c.model), || "different seeds give identical models".into())?;

    let out = train(&cfg, &pairs, &TrainOptions::default()).map_err(|e| e.to_string())?;
    let mut total = 0.0;
    for s in &set[40..] {
        let est = colorize_raw_fast(&out.model, &s.nir, params).map_err(|e| e.to_string())?;
        total += rmse(&est.image, &s.rgb).map_err(|e| e.to_string())?;
    }
    let held_out = total / 10.0;
    ensure(held_out < 0.05, || format!("held-out raw RMSE {held_out:.4} after 2000 epochs"))?;
    Ok(format!("held-out raw RMSE {held_out:.4} after 2000 epochs; bitwise deterministic per seed"))
}

fn c8_bypass() -> Outcome {
    let set = intensity_set(30, 48, 48, 3);
    let params = toy_config("net-1-9-2", 1, 0).decompose_params();
    let train_pairs = pairs_of(&set[..20], params)?;
    let val = pairs_of(&set[20..], params)?;
    let mut rows = Vec::new();
    for seed in [1u64, 2, 3] {
        let mut mse = [0.0; 2];
        for (i, name) in ["net-1-9-2", "net-1-9-2-bp"].iter().enumerate() {
            let cfg = toy_config(name, 300, seed);
            let opts = TrainOptions { validation: &val, ..Default::default() };
            let out = train(&cfg, &train_pairs, &opts).map_err(|e| e.to_string())?;
            mse[i] = out.history.last().and_then(|r| r.val_mse).ok_or("no validation record")?;
        }
        ensure(mse[1] <= mse[0], || format!("seed {seed}: bp {:.4} > plain {:.4}", mse[1], mse[0]))?;
        rows.push(format!("seed {seed}: {:.4} vs {:.4}", mse[1], mse[0]));
    }
    Ok(format!("held-out MSE bp vs plain at 300 epochs: {}", rows.join("; ")))
}

/// Textbook sRGB -> CIELAB (D65), independent of the library.
fn lab_oracle(rgb: [f64; 3]) -> [f64; 3] {
    let lin = rgb.map(|c| if c <= 0.04045 { c / 12.92 } else { ((c + 0.055) / 1.055).powf(2.4) });
    let x = 0.4124564 * lin[0] + 0.3575761 * lin[1] + 0.1804375 * lin[2];
    let y = 0.2126729 * lin[0] + 0.7151522 * lin[1] + 0.0721750 * lin[2];
    let z = 0.0193339 * lin[0] + 0.1191920 * lin[1] + 0.9503041 * lin[2];
    let (xn, yn, zn) = (0.9504700, 1.0000001, 1.0888300);
    let f = |t: f64| if t > 216.0 / 24389.0 { t.cbrt() } else { (24389.0 / 27.0 * t + 16.0) / 116.0 };
    let (fx, fy, fz) = (f(x / xn), f(y / yn), f(z / zn));
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

fn c9_metrics() -> Outcome {
    let e = |r: nircolor::Result<f64>| r.map_err(|e| e.to_string());
    let img = support::random_image(40, 30, 3, 5);
    let (r0, s0) = (e(rmse(&img, &img))?, e(scielab(&img, &img, 23.0))?);
    ensure(r0 == 0.0 && s0 == 0.0, || format!("identical inputs: rmse {r0}, scielab {s0}"))?;
    let colors = [[0.8, 0.2, 0.1], [0.1, 0.5, 0.9], [0.3, 0.3, 0.31], [0.02, 0.9, 0.4], [0.5, 0.5, 0.5]];
    let mut worst = 0.0f64;
    for (i, &p) in colors.iter().enumerate() {
        for &q in &colors[i + 1..] {
            let (lp, lq) = (lab_oracle(p), lab_oracle(q));
            let want = (0..3).map(|k| (lp[k] - lq[k]).powi(2)).sum::<f64>().sqrt();
            let a = Image::from_fn_rgb(24, 24, |_, _| p.map(|v| v as f32));
            let b = Image::from_fn_rgb(24, 24, |_, _| q.map(|v| v as f32));
            let got = e(scielab(&a, &b, 23.0))?;
            let plain = e(cielab(&a, &b))?;
            ensure((got - want).abs() < 0.1 && (plain - want).abs() < 0.1, || {
                format!("{p:?} vs {q:?}: scielab {got:.3}, cielab {plain:.3}, oracle {want:.3}")
            })?;
            worst = worst.max((got - want).abs());
        }
    }
    let black = Image::filled(32, 32, 3, 0.0).map_err(|e| e.to_string())?;
    let white = Image::filled(32, 32, 3, 1.0).map_err(|e| e.to_string())?;
    let bw = e(scielab(&black, &white, 23.0))?;
    ensure((bw - 100.0).abs() < 0.5, || format!("black vs white {bw:.3}"))?;
    Ok(format!("zero on identical inputs; uniform fields within {worst:.1e} of CIELAB; black vs white {bw:.3}"))
}

fn c10_sweep() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let params = DecomposeParams { window: 9, epsilon: 1e-4 };
    let set = sweep_set(6, 96, 96, 1, params).map_err(|e| e.to_string())?;
    write_dataset(&set, dir.path(), 8).map_err(|e| e.to_string())?;
    let csv_path = dir.path().join("sweep.csv");
    let arg = |p: &std::path::Path| p.to_str().expect("utf-8 path").to_string();
    let args = [
        "nirc".to_string(),
        "sweep".into(),
        "--nir".into(),
        arg(&dir.path().join("nir")),
        "--target".into(),
        arg(&dir.path().join("rgb")),
        "--raw".into(),
        arg(&dir.path().join("raw")),
        "--sigma-g".into(),
        "5,17,65".into(),
        "--sigma-f".into(),
        "0.0003,0.005,0.08".into(),
        "--window".into(),
        "9".into(),
        "--output".into(),
        arg(&csv_path),
    ];
    let code = nircolor::cli::run(args.map(Into::into));
    ensure(code == 0, || format!("sweep exited with {code}"))?;
    let text = std::fs::read_to_string(&csv_path).map_err(|e| e.to_string())?;
    let rows: Vec<(f64, f64, f64)> = text
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<f64> = l.split(',').map(|v| v.parse().expect("numeric csv")).collect();
            (f[0], f[1], f[2])
        })
        .collect();
    ensure(rows.len() == 9, || format!("{} rows", rows.len()))?;
    let score = |g: f64, f: f64| rows.iter().find(|r| r.0 == g && r.1 == f).map(|r| r.2).expect("row present");
    let mut detail = Vec::new();
    for sf in [0.0003, 0.005, 0.08] {
        let (s17, s65) = (score(17.0, sf), score(65.0, sf));
        ensure(s65 > s17, || format!("sigma_f {sf}: sigma_g=65 scores {s65:.3} <= sigma_g=17 {s17:.3}"))?;
        detail.push(format!("{s17:.2}<{s65:.2}"));
    }
    Ok(format!("9 rows; S-CIELAB sigma_g 17 < 65 at each sigma_f: {}", detail.join(", ")))
}

fn main() {
    let criteria: [(&str, Duration, fn() -> Outcome); 10] = [
        ("topology arithmetic", Duration::from_secs(1), c1_topology),
        ("coherence gap", Duration::from_secs(1), c2_gap),
        ("gradient correctness", Duration::from_secs(30), c3_gradients),
        ("decomposition reconstruction", Duration::from_secs(5), c4_reconstruction),
        ("bilateral-grid fidelity", Duration::from_secs(60), c5_bilateral),
        ("inference-path equivalence", Duration::from_secs(60), c6_inference),
        ("toy end-to-end training", Duration::from_secs(600), c7_toy_training),
        ("bypass trend", Duration::from_secs(900), c8_bypass),
        ("metric sanity", Duration::from_secs(5), c9_metrics),
        ("sweep harness", Duration::from_secs(600), c10_sweep),
    ];
    let mut failed = 0;
    for (i, (name, budget, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| Err(format!("panic: {}", panic_text(&p))));
        let elapsed = start.elapsed();
        let result = match result {
            Ok(msg) if elapsed > *budget => Err(format!("{msg}; over the {budget:?} budget")),
            other => other,
        };
        let secs = elapsed.as_secs_f64();
        match result {
            Ok(msg) => println!("PASS {:>2} {name}: {msg} ({secs:.2} s)", i + 1),
            Err(msg) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {msg} ({secs:.2} s)", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
