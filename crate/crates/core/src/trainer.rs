//! Dataset ingestion, patch sampling and the SGD training loop.
//!
//! The objective is the mean over a batch of patches of the squared
//! Euclidean distance between the network output and the mean-filtered RGB
//! target at the patch center. Each epoch draws one batch and takes one
//! momentum-SGD step on its mean gradient, with the learning rate annealed
//! linearly to zero.
//!
//! All randomness comes from `seed`: initialization uses it directly and
//! epoch `e` samples from its own ChaCha stream, so a resumed run replays
//! exactly the batches an uninterrupted run would have drawn.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::{load_image, Image};
use crate::nn::{sgd_step, InitScheme};
use crate::preprocess::{
    box_mean, extract_patch, BypassSource, DecomposeParams, DecomposedPyramid, MultiScalePatch, DEFAULT_EPSILON,
    DEFAULT_WINDOW,
};
use crate::topology::{build_model, model_from_bytes, model_to_bytes, Model, ModelGrads, TopologySpec, OUTPUTS};

/// Recognized image extensions when scanning dataset directories.
pub const IMAGE_EXTENSIONS: [&str; 4] = ["png", "pgm", "ppm", "pnm"];
/// Patches per gradient chunk. Chunks are summed in a fixed order, so
/// results do not depend on the thread count.
const GRAD_CHUNK: usize = 4;
/// Consecutive epochs above `DIVERGENCE_FACTOR` times the initial loss that
/// count as divergence.
pub const DIVERGENCE_PATIENCE: usize = 50;
pub const DIVERGENCE_FACTOR: f64 = 10.0;
const OPT_MAGIC: &[u8; 4] = b"NIRO";
const OPT_VERSION: u16 = 1;

/// A registered NIR / RGB image pair, preprocessed for training.
#[derive(Debug, Clone)]
pub struct TrainingPair {
    pub name: String,
    pub nir: Image,
    pub rgb: Image,
    /// Box-filtered RGB with the decomposition window.
    pub target_mean: Image,
    pub pyramid: DecomposedPyramid,
}

impl TrainingPair {
    pub fn new(name: impl Into<String>, nir: Image, rgb: Image, n_levels: usize, params: DecomposeParams) -> Result<Self> {
        let name = name.into();
        if nir.channels() != 1 || rgb.channels() != 3 {
            return Err(Error::Dataset(format!(
                "{name}: expected 1-channel NIR and 3-channel RGB, got {} and {}",
                nir.channels(),
                rgb.channels()
            )));
        }
        if !nir.same_size(&rgb) {
            return Err(Error::Dataset(format!(
                "{name}: NIR is {}x{} but RGB is {}x{}",
                nir.width(),
                nir.height(),
                rgb.width(),
                rgb.height()
            )));
        }
        let target_mean = box_mean(&rgb, params.window)?;
        let pyramid = DecomposedPyramid::new(&nir, n_levels, params)?;
        Ok(TrainingPair { name, nir, rgb, target_mean, pyramid })
    }
}

/// Paths of one NIR / RGB pair sharing a file stem.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairPaths {
    pub stem: String,
    pub nir: PathBuf,
    pub rgb: PathBuf,
}

/// Result of pairing two directories.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetScan {
    /// Pairs in lexicographic stem order.
    pub pairs: Vec<PairPaths>,
    /// Files with no partner in the other directory.
    pub orphans: Vec<PathBuf>,
}

fn images_by_stem(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if !path.is_file() || !ext.is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.as_str())) {
            continue;
        }
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        if let Some(prev) = out.insert(stem.clone(), path.clone()) {
            return Err(Error::Dataset(format!(
                "stem `{stem}` appears twice in {}: {} and {}",
                dir.display(),
                prev.display(),
                path.display()
            )));
        }
    }
    Ok(out)
}

/// Pairs files of `nir_dir` and `rgb_dir` by identical stem.
pub fn scan_dataset(nir_dir: impl AsRef<Path>, rgb_dir: impl AsRef<Path>) -> Result<DatasetScan> {
    let nir = images_by_stem(nir_dir.as_ref())?;
    let rgb = images_by_stem(rgb_dir.as_ref())?;
    let mut pairs = Vec::new();
    let mut orphans = Vec::new();
    for (stem, path) in &nir {
        match rgb.get(stem) {
            Some(r) => pairs.push(PairPaths { stem: stem.clone(), nir: path.clone(), rgb: r.clone() }),
            None => orphans.push(path.clone()),
        }
    }
    orphans.extend(rgb.iter().filter(|(s, _)| !nir.contains_key(*s)).map(|(_, p)| p.clone()));
    if pairs.is_empty() {
        let listed: Vec<String> = orphans.iter().map(|p| p.display().to_string()).collect();
        return Err(Error::Dataset(format!("no image pairs; unpaired files: [{}]", listed.join(", "))));
    }
    Ok(DatasetScan { pairs, orphans })
}

/// Loads and preprocesses every pair.
pub fn load_pairs(
    pairs: &[PairPaths],
    sensor_bits: Option<u32>,
    n_levels: usize,
    params: DecomposeParams,
) -> Result<Vec<TrainingPair>> {
    pairs
        .par_iter()
        .map(|p| {
            let nir = load_image(&p.nir, sensor_bits)?;
            let nir = if nir.channels() == 3 { nir.to_gray() } else { nir };
            let rgb = load_image(&p.rgb, None)?;
            TrainingPair::new(p.stem.clone(), nir, rgb, n_levels, params)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub spec: TopologySpec,
    pub epochs: usize,
    /// Initial learning rate.
    pub lr: f64,
    pub momentum: f64,
    pub patches_per_epoch: usize,
    pub images_per_epoch: usize,
    pub seed: u64,
    pub window: usize,
    pub epsilon: f32,
    pub bypass_source: BypassSource,
    pub init: InitScheme,
    /// Checkpoint cadence in epochs (0 disables checkpoints).
    pub checkpoint_every: usize,
    /// Held-out evaluation cadence in epochs.
    pub val_every: usize,
    /// Size of the fixed held-out batch.
    pub val_patches: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            spec: TopologySpec::default(),
            epochs: 10_000,
            lr: 1e-3,
            momentum: 0.9,
            patches_per_epoch: 256,
            images_per_epoch: 8,
            seed: 0,
            window: DEFAULT_WINDOW,
            epsilon: DEFAULT_EPSILON,
            bypass_source: BypassSource::AllLevels,
            init: InitScheme::He,
            checkpoint_every: 500,
            val_every: 100,
            val_patches: 1024,
        }
    }
}

impl TrainConfig {
    pub fn decompose_params(&self) -> DecomposeParams {
        DecomposeParams { window: self.window, epsilon: self.epsilon }
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        self.decompose_params().validate()?;
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be finite and non-negative, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        if self.epochs == 0 || self.patches_per_epoch == 0 || self.images_per_epoch == 0 {
            return Err(Error::Config("epochs, patches_per_epoch and images_per_epoch must be at least 1".into()));
        }
        Ok(())
    }

    /// `lr * (1 - epoch / epochs)`.
    pub fn annealed_lr(&self, epoch: usize) -> f64 {
        annealed_lr(self.lr, epoch, self.epochs)
    }
}

pub fn annealed_lr(lr: f64, epoch: usize, epochs: usize) -> f64 {
    lr * (1.0 - epoch as f64 / epochs as f64)
}

/// Random stream for epoch `epoch`.
pub fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    rng
}

fn validation_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    rng
}

#[derive(Debug, Clone)]
pub struct Batch {
    pub patches: Vec<MultiScalePatch>,
    pub targets: Vec<[f32; OUTPUTS]>,
    /// Pair index of each patch.
    pub sources: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }
}

/// Draws `images_per_epoch` pairs without replacement (all if fewer), then
/// `patches_per_epoch` centers uniformly over the chosen images' pixels.
pub fn sample_batch<R: Rng>(pairs: &[TrainingPair], config: &TrainConfig, rng: &mut R) -> Batch {
    sample_patches(pairs, config.images_per_epoch, config.patches_per_epoch, config, rng)
}

fn sample_patches<R: Rng>(
    pairs: &[TrainingPair],
    images: usize,
    patches: usize,
    config: &TrainConfig,
    rng: &mut R,
) -> Batch {
    let chosen = index::sample(rng, pairs.len(), images.min(pairs.len())).into_vec();
    let roi = config.spec.roi();
    let mut sources = Vec::with_capacity(patches);
    let mut centers = Vec::with_capacity(patches);
    for _ in 0..patches {
        let i = chosen[rng.random_range(0..chosen.len())];
        let p = &pairs[i];
        let c = (rng.random_range(0..p.nir.width()), rng.random_range(0..p.nir.height()));
        sources.push(i);
        centers.push(c);
    }
    let (patches, targets) = sources
        .par_iter()
        .zip(&centers)
        .map(|(&i, &c)| {
            let p = &pairs[i];
            let t = [0, 1, 2].map(|k| p.target_mean.get(c.0, c.1, k));
            (extract_patch(&p.pyramid, c, roi, config.bypass_source), t)
        })
        .unzip();
    Batch { patches, targets, sources }
}

/// Batch objective and its gradient: mean over patches of the squared
/// Euclidean output error.
pub fn batch_loss_and_gradient(model: &Model<f32>, batch: &Batch) -> Result<(f64, ModelGrads<f32>)> {
    let n = batch.len() as f32;
    let partial: Vec<(f64, ModelGrads<f32>)> = batch
        .patches
        .par_chunks(GRAD_CHUNK)
        .zip(batch.targets.par_chunks(GRAD_CHUNK))
        .map(|(ps, ts)| {
            let mut grads = ModelGrads::zeros(&model.spec);
            let mut loss = 0.0f64;
            for (p, t) in ps.iter().zip(ts) {
                let trace = model.forward_trace(p)?;
                let mut g = [0.0f32; OUTPUTS];
                for k in 0..OUTPUTS {
                    let d = trace.output[k] - t[k];
                    loss += (d as f64) * (d as f64);
                    g[k] = 2.0 * d / n;
                }
                grads.add_assign(&model.backward(&trace, &g)?);
            }
            Ok((loss, grads))
        })
        .collect::<Result<_>>()?;
    let mut total = ModelGrads::zeros(&model.spec);
    let mut loss = 0.0;
    for (l, g) in &partial {
        loss += l;
        total.add_assign(g);
    }
    Ok((loss / batch.len() as f64, total))
}

/// Batch objective without gradients.
pub fn batch_loss(model: &Model<f32>, batch: &Batch) -> Result<f64> {
    let sums: Vec<f64> = batch
        .patches
        .par_iter()
        .zip(&batch.targets)
        .map(|(p, t)| {
            let y = model.forward(p)?;
            Ok(y.iter().zip(t).map(|(a, b)| ((a - b) as f64).powi(2)).sum())
        })
        .collect::<Result<_>>()?;
    Ok(sums.iter().sum::<f64>() / batch.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_mse: f64,
    pub val_mse: Option<f64>,
}

pub const HISTORY_HEADER: &str = "epoch,lr,train_mse,val_mse";

impl EpochRecord {
    pub fn csv_row(&self) -> String {
        let val = self.val_mse.map(|v| format!("{v:.9e}")).unwrap_or_default();
        format!("{},{:.9e},{:.9e},{}", self.epoch, self.lr, self.train_mse, val)
    }
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from(HISTORY_HEADER);
    s.push('\n');
    for r in history {
        s += &r.csv_row();
        s.push('\n');
    }
    s
}

/// Optional outputs and inputs of a training run.
#[derive(Default)]
pub struct TrainOptions<'a> {
    /// Held-out pairs; enables `val_mse` and the best-validation checkpoint.
    pub validation: &'a [TrainingPair],
    /// Directory for periodic checkpoints.
    pub checkpoint_dir: Option<PathBuf>,
    /// Checkpoint to continue from.
    pub resume: Option<PathBuf>,
    /// Called after every epoch.
    pub progress: Option<&'a (dyn Fn(&EpochRecord) + Sync)>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model<f32>,
    /// Records of the epochs run in this call.
    pub history: Vec<EpochRecord>,
    pub best_val: Option<(usize, f64)>,
}

/// A model plus the optimizer state needed to continue training.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model<f32>,
    /// Last completed epoch.
    pub epoch: usize,
}

fn opt_path(model_path: &Path) -> PathBuf {
    let mut s = model_path.as_os_str().to_owned();
    s.push(".opt");
    PathBuf::from(s)
}

/// Writes `path` (model file) and `path.opt` (epoch and momentum buffers).
pub fn save_checkpoint(ck: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, model_to_bytes(&ck.model)?).map_err(|e| Error::io(path, e))?;
    let mut buf = Vec::new();
    buf.extend_from_slice(OPT_MAGIC);
    buf.extend_from_slice(&OPT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(ck.epoch as u64).to_le_bytes());
    let velocities: Vec<f32> = ck
        .model
        .params()
        .flat_map(|p| p.weight_velocity.iter().chain(&p.bias_velocity).copied())
        .collect();
    buf.extend_from_slice(&(velocities.len() as u64).to_le_bytes());
    for v in velocities {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let op = opt_path(path);
    fs::write(&op, buf).map_err(|e| Error::io(op, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>, expected: Option<&TopologySpec>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut model = model_from_bytes(&bytes, expected)?;
    let op = opt_path(path);
    let buf = fs::read(&op).map_err(|e| Error::io(&op, e))?;
    let bad = |m: &str| Error::ModelFormat(format!("{}: {m}", op.display()));
    if buf.len() < 22 || &buf[..4] != OPT_MAGIC {
        return Err(bad("not an optimizer state file"));
    }
    if u16::from_le_bytes([buf[4], buf[5]]) != OPT_VERSION {
        return Err(bad("unsupported version"));
    }
    let epoch = u64::from_le_bytes(buf[6..14].try_into().expect("8 bytes")) as usize;
    let count = u64::from_le_bytes(buf[14..22].try_into().expect("8 bytes")) as usize;
    if count != model.param_count() || buf.len() != 22 + 4 * count {
        return Err(bad("velocity count does not match the model"));
    }
    let mut vals = buf[22..].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")));
    for p in model.params_mut() {
        for v in p.weight_velocity.iter_mut().chain(p.bias_velocity.iter_mut()) {
            *v = vals.next().expect("count checked");
        }
    }
    Ok(Checkpoint { model, epoch })
}

/// Periodic checkpoint files kept on disk.
pub const KEEP_CHECKPOINTS: usize = 3;

pub fn checkpoint_name(epoch: usize) -> String {
    format!("ckpt-{epoch:06}.nirc")
}

pub const BEST_CHECKPOINT: &str = "best.nirc";

fn remove_checkpoint(path: &Path) {
    let _ = fs::remove_file(path);
    let _ = fs::remove_file(opt_path(path));
}

/// Runs `config.epochs` epochs (or the remainder after `opts.resume`).
pub fn train(config: &TrainConfig, pairs: &[TrainingPair], opts: &TrainOptions) -> Result<TrainOutcome> {
    config.validate()?;
    if pairs.is_empty() {
        return Err(Error::Dataset("no training pairs".into()));
    }
    let (mut model, start) = match &opts.resume {
        Some(path) => {
            let ck = load_checkpoint(path, Some(&config.spec))?;
            (ck.model, ck.epoch + 1)
        }
        None => (build_model(config.spec, config.window, config.init, config.seed)?, 0),
    };
    model.window = config.window;
    model.bypass_source = config.bypass_source;
    let val_batch = (!opts.validation.is_empty()).then(|| {
        let n = opts.validation.len();
        sample_patches(opts.validation, n, config.val_patches.max(1), config, &mut validation_rng(config.seed))
    });
    if let Some(dir) = &opts.checkpoint_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut history = Vec::with_capacity(config.epochs.saturating_sub(start));
    let mut kept: Vec<PathBuf> = Vec::new();
    let mut best_val: Option<(usize, f64)> = None;
    let mut initial: Option<f64> = None;
    let mut above = 0usize;
    for epoch in start..config.epochs {
        let lr = config.annealed_lr(epoch);
        let batch = sample_batch(pairs, config, &mut epoch_rng(config.seed, epoch));
        let (loss, grads) = batch_loss_and_gradient(&model, &batch)?;
        if !loss.is_finite() {
            return Err(Error::Diverged { epoch, lr, reason: format!("loss is {loss}") });
        }
        let first = *initial.get_or_insert(loss);
        above = if loss > DIVERGENCE_FACTOR * first { above + 1 } else { 0 };
        if above >= DIVERGENCE_PATIENCE {
            return Err(Error::Diverged {
                epoch,
                lr,
                reason: format!(
                    "loss above {DIVERGENCE_FACTOR}x the initial {first:.4e} for {DIVERGENCE_PATIENCE} epochs (now {loss:.4e})"
                ),
            });
        }
        sgd_step(&mut model.params_mut(), &grads.into_layers(), lr as f32, config.momentum as f32);
        let last = epoch + 1 == config.epochs;
        let val_mse = match &val_batch {
            Some(b) if config.val_every > 0 && ((epoch + 1) % config.val_every == 0 || last) => {
                Some(batch_loss(&model, b)?)
            }
            _ => None,
        };
        let record = EpochRecord { epoch, lr, train_mse: loss, val_mse };
        if let Some(cb) = opts.progress {
            cb(&record);
        }
        history.push(record);
        if let Some(dir) = &opts.checkpoint_dir {
            if let Some(v) = val_mse {
                if best_val.is_none_or(|(_, b)| v < b) {
                    best_val = Some((epoch, v));
                    save_checkpoint(&Checkpoint { model: model.clone(), epoch }, dir.join(BEST_CHECKPOINT))?;
                }
            }
            if config.checkpoint_every > 0 && ((epoch + 1) % config.checkpoint_every == 0 || last) {
                let path = dir.join(checkpoint_name(epoch));
                save_checkpoint(&Checkpoint { model: model.clone(), epoch }, &path)?;
                kept.push(path);
                while kept.len() > KEEP_CHECKPOINTS {
                    remove_checkpoint(&kept.remove(0));
                }
            }
        } else if let Some(v) = val_mse {
            if best_val.is_none_or(|(_, b)| v < b) {
                best_val = Some((epoch, v));
            }
        }
    }
    Ok(TrainOutcome { model, history, best_val })
}

/// Outcome of one learning-rate candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct LrTrial {
    pub lr: f64,
    /// Mean training loss over the last tenth of the run, `None` if diverged.
    pub smoothed_loss: Option<f64>,
}

/// Log-spaced decade grid `1e-1 .. 1e-5`.
pub fn default_lr_candidates() -> Vec<f64> {
    vec![1e-1, 1e-2, 1e-3, 1e-4, 1e-5]
}

pub const DEFAULT_MINI_EPOCHS: usize = 100;

/// Mean of the last `ceil(n / 10)` losses.
pub fn smoothed_final_loss(losses: &[f64]) -> f64 {
    let k = losses.len().div_ceil(10).max(1);
    let tail = &losses[losses.len() - k..];
    tail.iter().sum::<f64>() / k as f64
}

/// Runs `mini_epochs` from the same seed for every candidate and returns the
/// candidate with the lowest smoothed final loss (ties go to the smaller
/// rate), plus every trial.
pub fn lr_search(
    candidates: &[f64],
    mini_epochs: usize,
    config: &TrainConfig,
    pairs: &[TrainingPair],
) -> Result<(f64, Vec<LrTrial>)> {
    if candidates.is_empty() {
        return Err(Error::Config("no learning-rate candidates".into()));
    }
    let mut trials = Vec::with_capacity(candidates.len());
    for &lr in candidates {
        let cfg = TrainConfig { lr, epochs: mini_epochs, checkpoint_every: 0, ..config.clone() };
        let smoothed_loss = match train(&cfg, pairs, &TrainOptions::default()) {
            Ok(out) => {
                let losses: Vec<f64> = out.history.iter().map(|r| r.train_mse).collect();
                Some(smoothed_final_loss(&losses))
            }
            Err(Error::Diverged { .. }) => None,
            Err(e) => return Err(e),
        };
        trials.push(LrTrial { lr, smoothed_loss });
    }
    let best = trials
        .iter()
        .filter_map(|t| t.smoothed_loss.map(|l| (l, t.lr)))
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)))
        .ok_or_else(|| Error::Diverged {
            epoch: 0,
            lr: candidates[0],
            reason: "every learning-rate candidate diverged".into(),
        })?;
    Ok((best.1, trials))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn annealing_schedule() {
        let cfg = TrainConfig { lr: 0.5, epochs: 10, ..TrainConfig::default() };
        assert_eq!(cfg.annealed_lr(0), 0.5);
        assert!((cfg.annealed_lr(9) - 0.05).abs() < 1e-15);
        assert!((0..10).all(|e| cfg.annealed_lr(e) >= 0.0));
    }

    #[test]
    fn smoothing_window() {
        assert_eq!(smoothed_final_loss(&[3.0]), 3.0);
        let v: Vec<f64> = (0..20).map(|i| i as f64).collect();
        assert_eq!(smoothed_final_loss(&v), 18.5);
    }

    #[test]
    fn epoch_streams_differ_and_repeat() {
        let a: u64 = epoch_rng(1, 0).random();
        let b: u64 = epoch_rng(1, 1).random();
        assert_ne!(a, b);
        assert_eq!(a, epoch_rng(1, 0).random::<u64>());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { lr: -1.0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { epochs: 0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { momentum: 1.0, ..TrainConfig::default() }.validate().is_err());
    }

    #[test]
    fn history_rows() {
        let r = EpochRecord { epoch: 3, lr: 0.5, train_mse: 0.25, val_mse: None };
        assert_eq!(r.csv_row(), "3,5.000000000e-1,2.500000000e-1,");
        assert!(history_csv(&[r]).starts_with("epoch,lr,train_mse,val_mse\n3,"));
    }
}
