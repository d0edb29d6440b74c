//! The `nirc` command line.
//!
//! Exit status: 0 success, 1 usage or configuration error, 2 I/O or data
//! error, 3 numeric failure. Every failure prints one line to stderr:
//!
//! ```text
//! error: kind=<kind> exit=<code> msg=<message>
//! ```
//!
//! Subcommands that write files also write a `key = value` manifest next to
//! their primary output (`<output>.manifest`).

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use crate::config::{KeyValues, RunManifest};
use crate::error::Error;
use crate::image::{load_image, save_image, Image};
use crate::inference::{colorize_raw, colorize_raw_fast};
use crate::metrics::{Metric, MetricReport, DEFAULT_SAMPLES_PER_DEGREE};
use crate::nn::InitScheme;
use crate::postprocess::{add_details, joint_bilateral, BilateralParams, DEFAULT_SIGMA_F, DEFAULT_SIGMA_G, DEFAULT_SUBDIVISIONS};
use crate::preprocess::{decompose, BypassSource, DecomposeParams, DEFAULT_EPSILON, DEFAULT_WINDOW};
use crate::topology::{coherence_gap, load_model, required_roi, save_model, Model, TopologySpec, DEFAULT_KERNEL};
use crate::trainer::{
    default_lr_candidates, history_csv, load_pairs, lr_search, scan_dataset, train, EpochRecord, TrainConfig,
    TrainOptions, DEFAULT_MINI_EPOCHS, IMAGE_EXTENSIONS,
};

/// Affine remap applied to texture images before writing: `0.5 + 0.1 v`.
pub const TEXTURE_REMAP: (f32, f32) = (0.5, 0.1);
/// Affine remap applied to detail images before writing: `0.5 + 0.5 v`.
pub const DETAIL_REMAP: (f32, f32) = (0.5, 0.5);

#[derive(Parser, Debug)]
#[command(name = "nirc", version, about = "Near-infrared to RGB colorization")]
struct Cli {
    /// Worker threads (0 = all available cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the mean / std / texture / detail images of one input.
    Decompose(DecomposeArgs),
    /// Print the receptive field of a branch.
    Roi(RoiArgs),
    /// Print the coherence gap for a number of pooling layers.
    Gap(GapArgs),
    /// Train a model from a `key = value` config file.
    Train(TrainArgs),
    /// Short runs over candidate learning rates.
    LrSearch(LrSearchArgs),
    /// Raw estimate, joint bilateral filter and detail transfer.
    Colorize(ColorizeArgs),
    /// Joint bilateral filter of an RGB image guided by a NIR image.
    Filter(FilterArgs),
    /// Score predictions against targets.
    Eval(EvalArgs),
    /// Mean S-CIELAB over a grid of filter parameters.
    Sweep(SweepArgs),
}

#[derive(Args, Debug)]
struct InputArgs {
    /// Divide raw NIR samples by 2^bits - 1 instead of the container maximum.
    #[arg(long)]
    sensor_bits: Option<u32>,
    /// Bit depth of written images (8 or 16).
    #[arg(long, default_value_t = 16)]
    bits: u32,
}

#[derive(Args, Debug)]
struct DecomposeArgs {
    #[arg(long)]
    input: PathBuf,
    /// Files are written as `<prefix>.mean.png`, `.std`, `.tex`, `.det`.
    #[arg(long)]
    output_prefix: PathBuf,
    #[arg(long, default_value_t = DEFAULT_WINDOW)]
    window: usize,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    epsilon: f32,
    #[command(flatten)]
    io: InputArgs,
}

#[derive(Args, Debug)]
struct RoiArgs {
    #[arg(long)]
    nc: usize,
    #[arg(long)]
    np: usize,
    #[arg(long, default_value_t = DEFAULT_KERNEL)]
    nk: usize,
}

#[derive(Args, Debug)]
struct GapArgs {
    #[arg(long)]
    np: usize,
}

#[derive(Args, Debug)]
struct ConfigArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key (`key=value`); repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    topology: Option<String>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Model output path (config key `output`).
    #[arg(long)]
    output: Option<PathBuf>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Print a progress line every N epochs (0 = silent).
    #[arg(long, default_value_t = 100)]
    log_every: usize,
}

#[derive(Args, Debug)]
struct LrSearchArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Comma-separated learning rates.
    #[arg(long, value_delimiter = ',')]
    candidates: Option<Vec<f64>>,
    #[arg(long, default_value_t = DEFAULT_MINI_EPOCHS)]
    mini_epochs: usize,
    /// Also write the result table to this CSV file.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
struct FilterParamArgs {
    #[arg(long, default_value_t = DEFAULT_SIGMA_G)]
    sigma_g: f64,
    #[arg(long, default_value_t = DEFAULT_SIGMA_F)]
    sigma_f: f64,
    #[arg(long, default_value_t = DEFAULT_SUBDIVISIONS)]
    subdivisions: usize,
}

#[derive(Args, Debug)]
struct ColorizeArgs {
    #[arg(long)]
    model: PathBuf,
    /// A NIR image, or a directory of them.
    #[arg(long)]
    input: PathBuf,
    /// Output image, or directory when `--input` is a directory.
    #[arg(long)]
    output: PathBuf,
    /// Also write the unfiltered network estimate.
    #[arg(long)]
    raw_output: Option<PathBuf>,
    /// Use the per-pixel reference evaluation instead of the fast path.
    #[arg(long)]
    naive: bool,
    #[command(flatten)]
    filter: FilterParamArgs,
    /// Detail gain.
    #[arg(long, default_value_t = 1.0)]
    gain: f32,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    epsilon: f32,
    #[command(flatten)]
    io: InputArgs,
}

#[derive(Args, Debug)]
struct FilterArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    guide: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[command(flatten)]
    filter: FilterParamArgs,
    #[command(flatten)]
    io: InputArgs,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long, value_parser = ["rmse", "scielab"])]
    metric: String,
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    target: PathBuf,
    #[arg(long, default_value_t = DEFAULT_SAMPLES_PER_DEGREE)]
    spd: f64,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// Directory of NIR guides.
    #[arg(long)]
    nir: PathBuf,
    /// Directory of RGB targets.
    #[arg(long)]
    target: PathBuf,
    /// Directory of precomputed raw estimates.
    #[arg(long, conflicts_with = "model", required_unless_present = "model")]
    raw: Option<PathBuf>,
    /// Model used to compute raw estimates.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_values_t = [5.0, 17.0, 65.0])]
    sigma_g: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = [0.0003, 0.005, 0.08])]
    sigma_f: Vec<f64>,
    #[arg(long, default_value_t = DEFAULT_SUBDIVISIONS)]
    subdivisions: usize,
    /// Decomposition window for the detail layer (defaults to the model's).
    #[arg(long)]
    window: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    epsilon: f32,
    #[arg(long, default_value_t = 1.0)]
    gain: f32,
    #[arg(long, default_value_t = DEFAULT_SAMPLES_PER_DEGREE)]
    spd: f64,
    #[arg(long)]
    sensor_bits: Option<u32>,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
}

/// Failure of one invocation, already mapped to an exit status.
#[derive(Debug)]
struct Failure {
    code: i32,
    kind: String,
    msg: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::InvalidArgument(_) | Error::InvalidTopology(_) | Error::Config(_) => 1,
            Error::Diverged { .. } => 3,
            _ => 2,
        };
        Failure { code, kind: e.kind().to_string(), msg: e.to_string() }
    }
}

fn numeric(msg: impl Into<String>) -> Failure {
    Failure { code: 3, kind: "non-finite".into(), msg: msg.into() }
}

type CliResult<T = ()> = std::result::Result<T, Failure>;

/// Parses `args` (including the program name), runs the subcommand and
/// returns the process exit status.
pub fn run<I: IntoIterator<Item = OsString>>(args: I) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    0
                }
                _ => {
                    eprint!("{}", e.render());
                    let first = e.to_string().lines().next().unwrap_or_default().trim_start_matches("error: ").to_string();
                    report(&Failure { code: 1, kind: "usage".into(), msg: first });
                    1
                }
            };
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build() {
        Ok(p) => p,
        Err(e) => {
            report(&Failure { code: 1, kind: "threads".into(), msg: e.to_string() });
            return 1;
        }
    };
    match pool.install(|| dispatch(cli.command)) {
        Ok(()) => 0,
        Err(f) => {
            report(&f);
            f.code
        }
    }
}

fn report(f: &Failure) {
    let msg = f.msg.replace(['\n', '\r'], " ");
    eprintln!("error: kind={} exit={} msg={}", f.kind, f.code, msg);
}

fn dispatch(cmd: Command) -> CliResult {
    match cmd {
        Command::Decompose(a) => cmd_decompose(a),
        Command::Roi(a) => {
            println!("{}", required_roi(a.nc, a.np, a.nk)?);
            Ok(())
        }
        Command::Gap(a) => {
            if a.np >= usize::BITS as usize {
                return Err(Error::invalid(format!("--np {} is too large", a.np)).into());
            }
            println!("{}", coherence_gap(a.np));
            Ok(())
        }
        Command::Train(a) => cmd_train(a),
        Command::LrSearch(a) => cmd_lr_search(a),
        Command::Colorize(a) => cmd_colorize(a),
        Command::Filter(a) => cmd_filter(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Sweep(a) => cmd_sweep(a),
    }
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn write_text(path: &Path, text: &str) -> CliResult {
    fs::write(path, text).map_err(|e| Error::io(path, e).into())
}

fn ensure_parent(path: &Path) -> CliResult {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => fs::create_dir_all(p).map_err(|e| Error::io(p, e).into()),
        _ => Ok(()),
    }
}

fn load_gray(path: &Path, sensor_bits: Option<u32>) -> CliResult<Image> {
    let img = load_image(path, sensor_bits)?;
    Ok(if img.channels() == 3 { img.to_gray() } else { img })
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

fn cmd_decompose(a: DecomposeArgs) -> CliResult {
    let params = DecomposeParams { window: a.window, epsilon: a.epsilon };
    let img = load_gray(&a.input, a.io.sensor_bits)?;
    let mut kv = KeyValues::new();
    kv.set("input", path_str(&a.input));
    kv.set("output_prefix", path_str(&a.output_prefix));
    kv.set("window", a.window);
    kv.set("epsilon", a.epsilon);
    kv.set("bits", a.io.bits);
    if let Some(b) = a.io.sensor_bits {
        kv.set("sensor_bits", b);
    }
    let mut manifest = RunManifest::new("decompose", kv, None);
    let d = decompose(&img, params)?;
    ensure_parent(&a.output_prefix)?;
    let remap = |img: &Image, (offset, scale): (f32, f32)| {
        let clipped = img.data().iter().filter(|&&v| !(0.0..=1.0).contains(&(offset + scale * v))).count();
        (img.map(|v| offset + scale * v), clipped)
    };
    let (tex, tex_clipped) = remap(&d.texture, TEXTURE_REMAP);
    let (det, det_clipped) = remap(&d.detail, DETAIL_REMAP);
    for (suffix, out) in [(".mean.png", &d.mean), (".std.png", &d.std), (".tex.png", &tex), (".det.png", &det)] {
        save_image(out, with_suffix(&a.output_prefix, suffix), a.io.bits)?;
    }
    let mut sidecar = KeyValues::new();
    sidecar.set("tex_offset", TEXTURE_REMAP.0);
    sidecar.set("tex_scale", TEXTURE_REMAP.1);
    sidecar.set("tex_clipped", tex_clipped);
    sidecar.set("det_offset", DETAIL_REMAP.0);
    sidecar.set("det_scale", DETAIL_REMAP.1);
    sidecar.set("det_clipped", det_clipped);
    write_text(&with_suffix(&a.output_prefix, ".remap.txt"), &sidecar.to_string())?;
    manifest.write(with_suffix(&a.output_prefix, ".manifest"))?;
    Ok(())
}

/// Keys accepted in training configs. Manifest bookkeeping keys are
/// accepted and ignored so a manifest can be replayed as a config.
const TRAIN_KEYS: &[&str] = &[
    "nir_dir",
    "rgb_dir",
    "val_nir_dir",
    "val_rgb_dir",
    "output",
    "history",
    "checkpoint_dir",
    "resume",
    "topology",
    "epochs",
    "lr",
    "momentum",
    "patches_per_epoch",
    "images_per_epoch",
    "seed",
    "window",
    "epsilon",
    "bypass_source",
    "init",
    "checkpoint_every",
    "val_every",
    "val_patches",
    "sensor_bits",
    "candidates",
    "mini_epochs",
    "subcommand",
    "tool_version",
    "started_unix",
    "wall_clock_s",
];

fn resolve_config(a: &ConfigArgs) -> CliResult<KeyValues> {
    let mut kv = match &a.config {
        Some(p) => KeyValues::load(p)?,
        None => KeyValues::new(),
    };
    for o in &a.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{o}`")))?;
        kv.set(k.trim(), v.trim());
    }
    if let Some(s) = a.seed {
        kv.set("seed", s);
    }
    if let Some(e) = a.epochs {
        kv.set("epochs", e);
    }
    if let Some(lr) = a.lr {
        kv.set("lr", lr);
    }
    if let Some(t) = &a.topology {
        kv.set("topology", t);
    }
    kv.check_keys(TRAIN_KEYS)?;
    Ok(kv)
}

fn parse_init(s: &str) -> CliResult<InitScheme> {
    match s {
        "he" => Ok(InitScheme::He),
        _ => s
            .strip_prefix("fixed:")
            .and_then(|v| v.parse::<f64>().ok())
            .filter(|v| v.is_finite() && *v >= 0.0)
            .map(InitScheme::Fixed)
            .ok_or_else(|| Error::Config(format!("init must be `he` or `fixed:<std>`, got `{s}`")).into()),
    }
}

fn init_name(i: InitScheme) -> String {
    match i {
        InitScheme::He => "he".into(),
        InitScheme::Fixed(s) => format!("fixed:{s}"),
    }
}

fn parse_bypass_source(s: &str) -> CliResult<BypassSource> {
    match s {
        "all" => Ok(BypassSource::AllLevels),
        "level0" => Ok(BypassSource::Level0),
        _ => Err(Error::Config(format!("bypass_source must be `all` or `level0`, got `{s}`")).into()),
    }
}

fn bypass_source_name(b: BypassSource) -> &'static str {
    match b {
        BypassSource::AllLevels => "all",
        BypassSource::Level0 => "level0",
    }
}

/// Builds a [`TrainConfig`] from `kv` and writes every resolved value back.
fn train_config(kv: &mut KeyValues) -> CliResult<TrainConfig> {
    let d = TrainConfig::default();
    let spec: TopologySpec = match kv.raw("topology") {
        Some(t) => t.parse()?,
        None => d.spec,
    };
    let cfg = TrainConfig {
        spec,
        epochs: kv.get_or("epochs", d.epochs)?,
        lr: kv.get_or("lr", d.lr)?,
        momentum: kv.get_or("momentum", d.momentum)?,
        patches_per_epoch: kv.get_or("patches_per_epoch", d.patches_per_epoch)?,
        images_per_epoch: kv.get_or("images_per_epoch", d.images_per_epoch)?,
        seed: kv.get_or("seed", d.seed)?,
        window: kv.get_or("window", d.window)?,
        epsilon: kv.get_or("epsilon", d.epsilon)?,
        bypass_source: match kv.raw("bypass_source") {
            Some(s) => parse_bypass_source(s)?,
            None => d.bypass_source,
        },
        init: match kv.raw("init") {
            Some(s) => parse_init(s)?,
            None => d.init,
        },
        checkpoint_every: kv.get_or("checkpoint_every", d.checkpoint_every)?,
        val_every: kv.get_or("val_every", d.val_every)?,
        val_patches: kv.get_or("val_patches", d.val_patches)?,
    };
    cfg.validate()?;
    kv.set("topology", cfg.spec);
    kv.set("epochs", cfg.epochs);
    kv.set("lr", cfg.lr);
    kv.set("momentum", cfg.momentum);
    kv.set("patches_per_epoch", cfg.patches_per_epoch);
    kv.set("images_per_epoch", cfg.images_per_epoch);
    kv.set("seed", cfg.seed);
    kv.set("window", cfg.window);
    kv.set("epsilon", cfg.epsilon);
    kv.set("bypass_source", bypass_source_name(cfg.bypass_source));
    kv.set("init", init_name(cfg.init));
    kv.set("checkpoint_every", cfg.checkpoint_every);
    kv.set("val_every", cfg.val_every);
    kv.set("val_patches", cfg.val_patches);
    Ok(cfg)
}

fn required_path(kv: &KeyValues, key: &str) -> CliResult<PathBuf> {
    kv.raw(key)
        .map(PathBuf::from)
        .ok_or_else(|| Error::Config(format!("missing required key `{key}`")).into())
}

struct LoadedData {
    train: Vec<crate::trainer::TrainingPair>,
    validation: Vec<crate::trainer::TrainingPair>,
}

fn load_training_data(kv: &KeyValues, cfg: &TrainConfig) -> CliResult<LoadedData> {
    let sensor_bits: Option<u32> = kv.get("sensor_bits")?;
    let load = |nir_key: &str, rgb_key: &str| -> CliResult<Vec<crate::trainer::TrainingPair>> {
        let scan = scan_dataset(required_path(kv, nir_key)?, required_path(kv, rgb_key)?)?;
        for o in &scan.orphans {
            eprintln!("warning: unpaired file {}", o.display());
        }
        Ok(load_pairs(&scan.pairs, sensor_bits, cfg.spec.n_levels, cfg.decompose_params())?)
    };
    let train = load("nir_dir", "rgb_dir")?;
    let validation = match (kv.raw("val_nir_dir"), kv.raw("val_rgb_dir")) {
        (Some(_), Some(_)) => load("val_nir_dir", "val_rgb_dir")?,
        (None, None) => Vec::new(),
        _ => return Err(Error::Config("val_nir_dir and val_rgb_dir must be given together".into()).into()),
    };
    Ok(LoadedData { train, validation })
}

fn cmd_train(a: TrainArgs) -> CliResult {
    let mut kv = resolve_config(&a.cfg)?;
    if let Some(o) = &a.output {
        kv.set("output", path_str(o));
    }
    if let Some(r) = &a.resume {
        kv.set("resume", path_str(r));
    }
    let cfg = train_config(&mut kv)?;
    let output = required_path(&kv, "output")?;
    let history_path = kv.raw("history").map(PathBuf::from).unwrap_or_else(|| with_suffix(&output, ".history.csv"));
    kv.set("history", path_str(&history_path));
    let data = load_training_data(&kv, &cfg)?;
    let mut manifest = RunManifest::new("train", kv.clone(), Some(cfg.seed));

    let log_every = a.log_every;
    let progress = move |r: &EpochRecord| {
        if log_every > 0 && (r.epoch + 1).is_multiple_of(log_every) {
            match r.val_mse {
                Some(v) => eprintln!("epoch {} lr {:.3e} train_mse {:.6} val_mse {:.6}", r.epoch, r.lr, r.train_mse, v),
                None => eprintln!("epoch {} lr {:.3e} train_mse {:.6}", r.epoch, r.lr, r.train_mse),
            }
        }
    };
    let opts = TrainOptions {
        validation: &data.validation,
        checkpoint_dir: kv.raw("checkpoint_dir").map(PathBuf::from),
        resume: kv.raw("resume").map(PathBuf::from),
        progress: Some(&progress),
    };
    let out = train(&cfg, &data.train, &opts)?;
    ensure_parent(&output)?;
    save_model(&out.model, &output)?;
    write_text(&history_path, &history_csv(&out.history))?;
    if let Some((epoch, v)) = out.best_val {
        manifest.config.set("best_val_epoch", epoch);
        manifest.config.set("best_val_mse", v);
    }
    manifest.write(with_suffix(&output, ".manifest"))?;
    Ok(())
}

fn cmd_lr_search(a: LrSearchArgs) -> CliResult {
    let mut kv = resolve_config(&a.cfg)?;
    let cfg = train_config(&mut kv)?;
    let candidates = match (&a.candidates, kv.raw("candidates")) {
        (Some(c), _) => c.clone(),
        (None, Some(s)) => s
            .split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|e| Error::Config(format!("candidates: `{v}`: {e}"))))
            .collect::<Result<_, _>>()?,
        (None, None) => default_lr_candidates(),
    };
    let mini_epochs = if kv.raw("mini_epochs").is_some() && a.mini_epochs == DEFAULT_MINI_EPOCHS {
        kv.get_or("mini_epochs", DEFAULT_MINI_EPOCHS)?
    } else {
        a.mini_epochs
    };
    kv.set("candidates", candidates.iter().map(f64::to_string).collect::<Vec<_>>().join(","));
    kv.set("mini_epochs", mini_epochs);
    let data = load_training_data(&kv, &cfg)?;
    let mut manifest = RunManifest::new("lr-search", kv, Some(cfg.seed));
    let (best, trials) = lr_search(&candidates, mini_epochs, &cfg, &data.train)?;
    let mut csv = String::from("lr,smoothed_loss\n");
    for t in &trials {
        match t.smoothed_loss {
            Some(l) => csv += &format!("{},{l:.9}\n", t.lr),
            None => csv += &format!("{},diverged\n", t.lr),
        }
    }
    print!("{csv}");
    println!("best,{best}");
    if let Some(o) = &a.output {
        ensure_parent(o)?;
        write_text(o, &csv)?;
        manifest.config.set("best_lr", best);
        manifest.write(with_suffix(o, ".manifest"))?;
    }
    Ok(())
}

/// Image files of `dir` in lexicographic order.
fn list_images(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if p.is_file() && ext.is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.as_str())) {
            files.push(p);
        }
    }
    files.sort();
    Ok(files)
}

fn stem(p: &Path) -> String {
    p.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string()
}

fn filter_params(f: &FilterParamArgs) -> CliResult<BilateralParams> {
    Ok(BilateralParams::new(f.sigma_g, f.sigma_f)?.with_subdivisions(f.subdivisions)?)
}

/// Full colorization chain for one image: raw estimate, joint bilateral
/// filter guided by the input, detail transfer.
fn colorize_one(
    model: &Model<f32>,
    nir: &Image,
    params: DecomposeParams,
    bilateral: BilateralParams,
    gain: f32,
    naive: bool,
) -> CliResult<(Image, Image)> {
    let raw = if naive { colorize_raw(model, nir, params)? } else { colorize_raw_fast(model, nir, params)? }.image;
    if !raw.is_finite() {
        return Err(numeric("raw estimate contains non-finite values"));
    }
    let filtered = joint_bilateral(&raw, nir, bilateral)?;
    let detail = decompose(nir, params)?.detail;
    let out = add_details(&filtered, &detail, gain)?;
    if !out.is_finite() {
        return Err(numeric("colorized output contains non-finite values"));
    }
    Ok((out, raw))
}

fn cmd_colorize(a: ColorizeArgs) -> CliResult {
    let model = load_model(&a.model, None)?;
    let window = if model.window == 0 { DEFAULT_WINDOW } else { model.window };
    let params = DecomposeParams { window, epsilon: a.epsilon };
    let bilateral = filter_params(&a.filter)?;
    let jobs: Vec<(PathBuf, PathBuf, Option<PathBuf>)> = if a.input.is_dir() {
        fs::create_dir_all(&a.output).map_err(|e| Error::io(&a.output, e))?;
        if let Some(r) = &a.raw_output {
            fs::create_dir_all(r).map_err(|e| Error::io(r, e))?;
        }
        list_images(&a.input)?
            .into_iter()
            .map(|p| {
                let name = format!("{}.png", stem(&p));
                let raw = a.raw_output.as_ref().map(|r| r.join(&name));
                (p, a.output.join(&name), raw)
            })
            .collect()
    } else {
        ensure_parent(&a.output)?;
        if let Some(r) = &a.raw_output {
            ensure_parent(r)?;
        }
        vec![(a.input.clone(), a.output.clone(), a.raw_output.clone())]
    };
    let mut kv = KeyValues::new();
    kv.set("model", path_str(&a.model));
    kv.set("topology", model.spec);
    kv.set("input", path_str(&a.input));
    kv.set("output", path_str(&a.output));
    if let Some(r) = &a.raw_output {
        kv.set("raw_output", path_str(r));
    }
    kv.set("naive", a.naive);
    kv.set("window", window);
    kv.set("epsilon", a.epsilon);
    kv.set("sigma_g", a.filter.sigma_g);
    kv.set("sigma_f", a.filter.sigma_f);
    kv.set("subdivisions", a.filter.subdivisions);
    kv.set("gain", a.gain);
    kv.set("bits", a.io.bits);
    kv.set("images", jobs.len());
    if let Some(b) = a.io.sensor_bits {
        kv.set("sensor_bits", b);
    }
    let mut manifest = RunManifest::new("colorize", kv, None);
    for (input, output, raw_out) in &jobs {
        let nir = load_gray(input, a.io.sensor_bits)?;
        let (out, raw) = colorize_one(&model, &nir, params, bilateral, a.gain, a.naive)?;
        save_image(&out, output, a.io.bits)?;
        if let Some(r) = raw_out {
            save_image(&raw.clamp_unit(), r, a.io.bits)?;
        }
    }
    let manifest_path = if a.input.is_dir() { a.output.join("colorize.manifest") } else { with_suffix(&a.output, ".manifest") };
    manifest.write(manifest_path)?;
    Ok(())
}

fn cmd_filter(a: FilterArgs) -> CliResult {
    let p = filter_params(&a.filter)?;
    let src = load_image(&a.input, None)?;
    let guide = load_gray(&a.guide, a.io.sensor_bits)?;
    let mut kv = KeyValues::new();
    kv.set("input", path_str(&a.input));
    kv.set("guide", path_str(&a.guide));
    kv.set("output", path_str(&a.output));
    kv.set("sigma_g", a.filter.sigma_g);
    kv.set("sigma_f", a.filter.sigma_f);
    kv.set("subdivisions", a.filter.subdivisions);
    kv.set("bits", a.io.bits);
    let mut manifest = RunManifest::new("filter", kv, None);
    let out = joint_bilateral(&src, &guide, p)?;
    if !out.is_finite() {
        return Err(numeric("filtered output contains non-finite values"));
    }
    ensure_parent(&a.output)?;
    save_image(&out, &a.output, a.io.bits)?;
    manifest.write(with_suffix(&a.output, ".manifest"))?;
    Ok(())
}

fn emit_csv(csv: &str, output: Option<&Path>, manifest: &mut RunManifest) -> CliResult {
    match output {
        Some(o) => {
            ensure_parent(o)?;
            write_text(o, csv)?;
            manifest.write(with_suffix(o, ".manifest"))?;
        }
        None => print!("{csv}"),
    }
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> CliResult {
    let metric = match a.metric.as_str() {
        "rmse" => Metric::Rmse,
        _ => Metric::Scielab { samples_per_degree: a.spd },
    };
    let scan = scan_dataset(&a.pred, &a.target)?;
    for o in &scan.orphans {
        eprintln!("warning: unpaired file {}", o.display());
    }
    let mut kv = KeyValues::new();
    kv.set("metric", metric.name());
    kv.set("pred", path_str(&a.pred));
    kv.set("target", path_str(&a.target));
    kv.set("spd", a.spd);
    kv.set("images", scan.pairs.len());
    let mut manifest = RunManifest::new("eval", kv, None);
    let scores = scan
        .pairs
        .par_iter()
        .map(|p| {
            let pred = load_image(&p.nir, None)?;
            let target = load_image(&p.rgb, None)?;
            Ok((p.stem.clone(), metric.evaluate(&pred, &target)?))
        })
        .collect::<Result<Vec<_>, Error>>()?;
    if let Some((name, _)) = scores.iter().find(|s| !s.1.is_finite()) {
        return Err(numeric(format!("non-finite score for {name}")));
    }
    let report = MetricReport::from_scores(scores);
    emit_csv(&report.to_csv(metric.name()), a.output.as_deref(), &mut manifest)
}

/// Header of the `sweep` CSV.
pub const SWEEP_HEADER: &str = "sigma_g,sigma_f,mean_scielab,std_scielab";

fn cmd_sweep(a: SweepArgs) -> CliResult {
    if a.sigma_g.is_empty() || a.sigma_f.is_empty() {
        return Err(Error::invalid("empty sigma list").into());
    }
    let grid: Vec<BilateralParams> = a
        .sigma_g
        .iter()
        .flat_map(|&g| a.sigma_f.iter().map(move |&f| (g, f)))
        .map(|(g, f)| BilateralParams::new(g, f)?.with_subdivisions(a.subdivisions))
        .collect::<Result<_, Error>>()?;
    let model = a.model.as_ref().map(|m| load_model(m, None)).transpose()?;
    let window = match (a.window, &model) {
        (Some(w), _) => w,
        (None, Some(m)) if m.window != 0 => m.window,
        _ => DEFAULT_WINDOW,
    };
    let params = DecomposeParams { window, epsilon: a.epsilon };
    let scan = scan_dataset(&a.nir, &a.target)?;
    let raw_paths = match &a.raw {
        Some(dir) => {
            let raws = scan_dataset(&a.nir, dir)?;
            let map: std::collections::BTreeMap<String, PathBuf> =
                raws.pairs.into_iter().map(|p| (p.stem, p.rgb)).collect();
            Some(map)
        }
        None => None,
    };

    let mut kv = KeyValues::new();
    kv.set("nir", path_str(&a.nir));
    kv.set("target", path_str(&a.target));
    if let Some(r) = &a.raw {
        kv.set("raw", path_str(r));
    }
    if let Some(m) = &a.model {
        kv.set("model", path_str(m));
    }
    let join = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(",");
    kv.set("sigma_g", join(&a.sigma_g));
    kv.set("sigma_f", join(&a.sigma_f));
    kv.set("subdivisions", a.subdivisions);
    kv.set("window", window);
    kv.set("epsilon", a.epsilon);
    kv.set("gain", a.gain);
    kv.set("spd", a.spd);
    kv.set("images", scan.pairs.len());
    let mut manifest = RunManifest::new("sweep", kv, None);

    struct Scene {
        nir: Image,
        target: Image,
        raw: Image,
        detail: Image,
    }
    let scenes = scan
        .pairs
        .par_iter()
        .map(|p| -> CliResult<Scene> {
            let nir = load_gray(&p.nir, a.sensor_bits)?;
            let target = load_image(&p.rgb, None)?;
            let raw = match (&raw_paths, &model) {
                (Some(map), _) => {
                    let rp = map.get(&p.stem).ok_or_else(|| {
                        Error::Dataset(format!("no raw estimate for `{}`", p.stem))
                    })?;
                    load_image(rp, None)?
                }
                (None, Some(m)) => colorize_raw_fast(m, &nir, params)?.image,
                (None, None) => unreachable!("clap requires --raw or --model"),
            };
            let detail = decompose(&nir, params)?.detail;
            Ok(Scene { nir, target, raw, detail })
        })
        .collect::<CliResult<Vec<_>>>()?;

    let mut csv = format!("{SWEEP_HEADER}\n");
    for bp in &grid {
        let scores = scenes
            .par_iter()
            .zip(&scan.pairs)
            .map(|(s, p)| -> CliResult<(String, f64)> {
                let filtered = joint_bilateral(&s.raw, &s.nir, *bp)?;
                let out = add_details(&filtered, &s.detail, a.gain)?;
                Ok((p.stem.clone(), crate::metrics::scielab(&out, &s.target, a.spd)?))
            })
            .collect::<CliResult<Vec<_>>>()?;
        let report = MetricReport::from_scores(scores);
        if !report.mean.is_finite() {
            return Err(numeric(format!("non-finite score at sigma_g={} sigma_f={}", bp.sigma_g, bp.sigma_f)));
        }
        csv += &format!("{},{},{:.9},{:.9}\n", bp.sigma_g, bp.sigma_f, report.mean, report.std);
    }
    emit_csv(&csv, a.output.as_deref(), &mut manifest)
}
