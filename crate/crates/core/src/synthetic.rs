//! Synthetic NIR / RGB datasets with known structure, for smoke tests,
//! examples and directional experiments.

use std::f32::consts::TAU;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::{save_image, Image};
use crate::postprocess::add_details;
use crate::preprocess::{decompose, DecomposeParams};

/// Per-channel gain and offset of [`affine_set`].
pub const AFFINE_GAIN: [f32; 3] = [0.8, 0.55, 0.3];
pub const AFFINE_OFFSET: [f32; 3] = [0.05, 0.2, 0.35];

#[derive(Debug, Clone)]
pub struct SyntheticSample {
    pub name: String,
    pub nir: Image,
    pub rgb: Image,
    /// Stand-in for a raw network estimate, when the set defines one.
    pub raw: Option<Image>,
}

/// Rounds to the nearest of `2^bits` levels on [0,1].
pub fn quantize(img: &Image, bits: u32) -> Image {
    let max = ((1u32 << bits) - 1) as f32;
    img.map(|v| (v.clamp(0.0, 1.0) * max).round() / max)
}

/// Low-frequency field in `[lo, hi]`: a few broad Gaussian bumps plus a
/// slow plane wave.
pub fn smooth_field<R: Rng>(w: usize, h: usize, lo: f32, hi: f32, rng: &mut R) -> Image {
    let scale = w.max(h) as f32;
    let bumps: Vec<(f32, f32, f32, f32)> = (0..4)
        .map(|_| {
            (
                rng.random_range(0.0..w as f32),
                rng.random_range(0.0..h as f32),
                rng.random_range(0.25..0.5) * scale,
                rng.random_range(-1.0..1.0),
            )
        })
        .collect();
    let (fx, fy, ph) = (rng.random_range(-1.0..1.0f32), rng.random_range(-1.0..1.0f32), rng.random_range(0.0..TAU));
    let raw = Image::from_fn_gray(w, h, |x, y| {
        let (x, y) = (x as f32, y as f32);
        let b: f32 = bumps
            .iter()
            .map(|&(cx, cy, s, a)| a * (-((x - cx).powi(2) + (y - cy).powi(2)) / (2.0 * s * s)).exp())
            .sum();
        b + 0.5 * (TAU * (fx * x + fy * y) / (2.0 * scale) + ph).sin()
    });
    let (mn, mx) = raw.data().iter().fold((f32::MAX, f32::MIN), |(a, b), &v| (a.min(v), b.max(v)));
    let span = (mx - mn).max(1e-6);
    raw.map(|v| lo + (hi - lo) * (v - mn) / span)
}

/// RGB is a fixed per-channel affine map of a smooth NIR image.
pub fn affine_set(n: usize, w: usize, h: usize, seed: u64) -> Vec<SyntheticSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let nir = smooth_field(w, h, 0.1, 0.9, &mut rng);
            let rgb = Image::from_fn_rgb(w, h, |x, y| {
                let v = nir.get(x, y, 0);
                [0, 1, 2].map(|c| AFFINE_GAIN[c] * v + AFFINE_OFFSET[c])
            });
            SyntheticSample { name: format!("affine_{i:03}"), nir, rgb, raw: None }
        })
        .collect()
}

/// Each image is a random brightness level plus weak texture; the target is
/// the NIR intensity copied to all three channels. Normalized texture alone
/// cannot reveal the level.
pub fn intensity_set(n: usize, w: usize, h: usize, seed: u64) -> Vec<SyntheticSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let level = rng.random_range(0.15..0.85f32);
            let field = smooth_field(w, h, -0.08, 0.08, &mut rng);
            let (px, py) = (rng.random_range(3.0..7.0f32), rng.random_range(3.0..7.0f32));
            let nir = Image::from_fn_gray(w, h, |x, y| {
                let tex = 0.03 * (TAU * x as f32 / px).sin() * (TAU * y as f32 / py).cos();
                level + field.get(x, y, 0) + tex
            });
            let rgb = Image::from_planes([&nir, &nir, &nir]).expect("same size");
            SyntheticSample { name: format!("level_{i:03}"), nir, rgb, raw: None }
        })
        .collect()
}

/// Amplitude of the checkerboard added to the raw estimate in [`sweep_set`].
pub const SWEEP_CHECKER_AMPLITUDE: f32 = 0.06;
/// Side of one checkerboard cell in [`sweep_set`] (the coherence gap of a
/// 3-pool network).
pub const SWEEP_CHECKER_PERIOD: usize = 8;

/// Scenes of flat NIR regions with distinct colors. The RGB truth is a
/// region color with a slow color modulation plus the NIR detail layer; the
/// raw estimate is the truth without detail, overlaid with a checkerboard
/// interleaving artifact. All images are quantized to 8 bits.
pub fn sweep_set(n: usize, w: usize, h: usize, seed: u64, params: DecomposeParams) -> Result<Vec<SyntheticSample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let k = 5;
        let sites: Vec<(f32, f32)> =
            (0..k).map(|_| (rng.random_range(0.0..w as f32), rng.random_range(0.0..h as f32))).collect();
        let levels: Vec<f32> = (0..k).map(|j| 0.2 + 0.6 * j as f32 / (k - 1) as f32).collect();
        let colors: Vec<[f32; 3]> =
            (0..k).map(|_| [0, 1, 2].map(|_| rng.random_range(0.15..0.85f32))).collect();
        let period = rng.random_range(0.6..1.0) * w as f32;
        let phase = rng.random_range(0.0..TAU);
        let region = |x: usize, y: usize| {
            let (x, y) = (x as f32, y as f32);
            (0..k)
                .min_by(|&a, &b| {
                    let da = (x - sites[a].0).powi(2) + (y - sites[a].1).powi(2);
                    let db = (x - sites[b].0).powi(2) + (y - sites[b].1).powi(2);
                    da.total_cmp(&db)
                })
                .expect("k > 0")
        };
        let nir = quantize(&Image::from_fn_gray(w, h, |x, y| levels[region(x, y)]), 8);
        let smooth = Image::from_fn_rgb(w, h, |x, y| {
            let m = 0.12 * (TAU * (x + y) as f32 / period + phase).sin();
            colors[region(x, y)].map(|c| c + m)
        });
        let detail = decompose(&nir, params)?.detail;
        let rgb = quantize(&add_details(&smooth, &detail, 1.0)?, 8);
        let raw = Image::from_fn_rgb(w, h, |x, y| {
            let s = if ((x / SWEEP_CHECKER_PERIOD) + (y / SWEEP_CHECKER_PERIOD)).is_multiple_of(2) { 1.0 } else { -1.0 };
            [0, 1, 2].map(|c| smooth.get(x, y, c) + s * SWEEP_CHECKER_AMPLITUDE)
        });
        out.push(SyntheticSample { name: format!("scene_{i:03}"), nir, rgb, raw: Some(quantize(&raw, 8)) });
    }
    Ok(out)
}

/// Writes `dir/nir/<name>.png`, `dir/rgb/<name>.png` and, when present,
/// `dir/raw/<name>.png` at the given bit depth.
pub fn write_dataset(samples: &[SyntheticSample], dir: impl AsRef<Path>, bits: u32) -> Result<()> {
    let dir = dir.as_ref();
    for sub in ["nir", "rgb", "raw"] {
        if sub != "raw" || samples.iter().any(|s| s.raw.is_some()) {
            let d = dir.join(sub);
            std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        }
    }
    for s in samples {
        let file = format!("{}.png", s.name);
        save_image(&s.nir, dir.join("nir").join(&file), bits)?;
        save_image(&s.rgb, dir.join("rgb").join(&file), bits)?;
        if let Some(raw) = &s.raw {
            save_image(raw, dir.join("raw").join(&file), bits)?;
        }
    }
    Ok(())
}
