//! Drives the command-line interface in-process: write a dataset, train,
//! colorize a directory and evaluate it.
//!
//! ```text
//! cargo run --release --example cli_pipeline
//! ```

use std::ffi::OsString;
use std::path::Path;

use nircolor::synthetic::{affine_set, write_dataset};

fn nirc(args: &[&str]) {
    println!("$ nirc {}", args.join(" "));
    let argv = std::iter::once("nirc").chain(args.iter().copied()).map(OsString::from);
    let code = nircolor::cli::run(argv);
    assert_eq!(code, 0, "nirc exited with {code}");
}

fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 path")
}

fn main() -> nircolor::Result<()> {
    let dir = tempfile::tempdir().expect("temp dir");
    let root = dir.path();
    let set = affine_set(12, 48, 48, 5);
    write_dataset(&set[..8], root.join("train"), 16)?;
    write_dataset(&set[8..], root.join("test"), 16)?;

    nirc(&["roi", "--nc", "12", "--np", "3"]);
    nirc(&["gap", "--np", "3"]);

    let cfg = root.join("train.cfg");
    std::fs::write(
        &cfg,
        format!(
            "nir_dir = {}\nrgb_dir = {}\ntopology = net-1-9-2-bp\nwindow = 9\nepochs = 150\npatches_per_epoch = 16\ncheckpoint_every = 0\nseed = 3\n",
            p(&root.join("train/nir")),
            p(&root.join("train/rgb"))
        ),
    )
    .expect("write config");
    let model = root.join("toy.nirc");
    nirc(&["train", "--config", p(&cfg), "--output", p(&model), "--log-every", "50"]);

    let pred = root.join("pred");
    nirc(&["colorize", "--model", p(&model), "--input", p(&root.join("test/nir")), "--output", p(&pred)]);
    nirc(&["eval", "--metric", "rmse", "--pred", p(&pred), "--target", p(&root.join("test/rgb"))]);
    nirc(&["eval", "--metric", "scielab", "--pred", p(&pred), "--target", p(&root.join("test/rgb"))]);

    println!("\nmanifest of the training run:");
    print!("{}", std::fs::read_to_string(root.join("toy.nirc.manifest")).expect("manifest"));
    Ok(())
}
