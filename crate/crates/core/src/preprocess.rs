//! Image pyramid construction, local mean/variance normalization and
//! multi-scale patch extraction.
//!
//! Each pyramid level is split into a low-frequency mean image, a local
//! standard deviation image, a normalized texture image and a detail image:
//!
//! ```text
//! texture = (I - mean) / (std + eps)
//! detail  = texture * std
//! I       = mean + texture * (std + eps)
//! ```
//!
//! Moments are box-window statistics with mirrored borders.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::{reflect, Image};

pub const DEFAULT_WINDOW: usize = 33;
pub const DEFAULT_EPSILON: f32 = 1e-4;
pub const MAX_LEVELS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecomposeParams {
    pub window: usize,
    pub epsilon: f32,
}

impl Default for DecomposeParams {
    fn default() -> Self {
        Self {
            window: DEFAULT_WINDOW,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

impl DecomposeParams {
    pub fn validate(&self) -> Result<()> {
        if self.window < 3 || self.window.is_multiple_of(2) {
            return Err(Error::invalid(format!(
                "window {} must be odd and at least 3",
                self.window
            )));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::invalid(format!("epsilon {} must be positive", self.epsilon)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Decomposition {
    pub mean: Image,
    pub std: Image,
    pub texture: Image,
    pub detail: Image,
    pub window: usize,
    pub epsilon: f32,
}

impl Decomposition {
    /// `mean + texture * (std + eps)`.
    pub fn reconstruct(&self) -> Image {
        let eps = self.epsilon;
        let data = self
            .mean
            .data()
            .iter()
            .zip(self.texture.data())
            .zip(self.std.data())
            .map(|((&m, &t), &s)| m + t * (s + eps))
            .collect();
        Image::new(self.mean.width(), self.mean.height(), self.mean.channels(), data)
            .expect("components share a shape")
    }
}

/// Levels of a dyadic pyramid, level 0 at full resolution.
#[derive(Debug, Clone)]
pub struct Pyramid {
    pub levels: Vec<Image>,
}

/// Which pyramid levels feed the mean-value bypass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BypassSource {
    /// One bypass value per level, taken from that level's mean image.
    #[default]
    AllLevels,
    /// Every bypass slot carries the level-0 mean value.
    Level0,
}

impl BypassSource {
    pub fn code(self) -> u16 {
        match self {
            BypassSource::AllLevels => 0,
            BypassSource::Level0 => 1,
        }
    }

    pub fn from_code(code: u16) -> Result<Self> {
        match code {
            0 => Ok(BypassSource::AllLevels),
            1 => Ok(BypassSource::Level0),
            other => Err(Error::ModelFormat(format!("unknown bypass source {other}"))),
        }
    }
}

/// Per-level decompositions of one image's pyramid.
#[derive(Debug, Clone)]
pub struct DecomposedPyramid {
    pub levels: Vec<Decomposition>,
}

impl DecomposedPyramid {
    /// Builds the pyramid and decomposes every level independently with the
    /// same window (in that level's pixel units).
    pub fn new(img: &Image, n_levels: usize, params: DecomposeParams) -> Result<Self> {
        let pyr = build_pyramid(img, n_levels)?;
        let levels = pyr
            .levels
            .par_iter()
            .map(|level| decompose(level, params))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { levels })
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn width(&self) -> usize {
        self.levels[0].mean.width()
    }

    pub fn height(&self) -> usize {
        self.levels[0].mean.height()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiScalePatch {
    /// Square texture patches, one per level, each `roi` pixels wide.
    pub patches: Vec<Image>,
    /// Mean-image values at each level's mapped center.
    pub bypass: Vec<f32>,
    pub center: (usize, usize),
    pub roi: usize,
}

/// Builds an `n_levels` pyramid by repeated 2x2 block averaging.
pub fn build_pyramid(img: &Image, n_levels: usize) -> Result<Pyramid> {
    if n_levels == 0 || n_levels > MAX_LEVELS {
        return Err(Error::invalid(format!(
            "pyramid level count {n_levels} not in 1..={MAX_LEVELS}"
        )));
    }
    let div = 1usize << (n_levels - 1);
    if !img.width().is_multiple_of(div) || !img.height().is_multiple_of(div) {
        return Err(Error::invalid(format!(
            "{}x{} is not divisible by {div}; center-crop first",
            img.width(),
            img.height()
        )));
    }
    let mut levels = vec![img.clone()];
    for _ in 1..n_levels {
        let next = downsample2(levels.last().unwrap());
        levels.push(next);
    }
    Ok(Pyramid { levels })
}

fn downsample2(img: &Image) -> Image {
    let (w, h, c) = (img.width() / 2, img.height() / 2, img.channels());
    let mut data = Vec::with_capacity(w * h * c);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let s = img.get(2 * x, 2 * y, ch) as f64
                    + img.get(2 * x + 1, 2 * y, ch) as f64
                    + img.get(2 * x, 2 * y + 1, ch) as f64
                    + img.get(2 * x + 1, 2 * y + 1, ch) as f64;
                data.push((s * 0.25) as f32);
            }
        }
    }
    Image::new(w, h, c, data).expect("downsampled shape")
}

/// Box-window local mean and (population) standard deviation, per channel.
pub fn local_moments(img: &Image, window: usize) -> Result<(Image, Image)> {
    if window.is_multiple_of(2) || window == 0 {
        return Err(Error::invalid(format!("window {window} must be odd")));
    }
    if window > img.width() || window > img.height() {
        return Err(Error::invalid(format!(
            "window {window} larger than {}x{} image",
            img.width(),
            img.height()
        )));
    }
    let (w, h, nc) = (img.width(), img.height(), img.channels());
    let r = (window / 2) as isize;
    let pw = w + window - 1;
    let ph = h + window - 1;
    let n = (window * window) as f64;
    let mut mean = vec![0f32; w * h * nc];
    let mut std = vec![0f32; w * h * nc];

    for ch in 0..nc {
        // Shifting by one sample keeps flat regions exactly zero-variance.
        let shift = img.get(0, 0, ch) as f64;
        let stride = pw + 1;
        let mut s1 = vec![0f64; stride * (ph + 1)];
        let mut s2 = vec![0f64; stride * (ph + 1)];
        for py in 0..ph {
            let sy = reflect(py as isize - r, h);
            let mut row1 = 0f64;
            let mut row2 = 0f64;
            for px in 0..pw {
                let sx = reflect(px as isize - r, w);
                let v = img.get(sx, sy, ch) as f64 - shift;
                row1 += v;
                row2 += v * v;
                let i = (py + 1) * stride + px + 1;
                s1[i] = s1[i - stride] + row1;
                s2[i] = s2[i - stride] + row2;
            }
        }
        let rect = |s: &[f64], x: usize, y: usize| {
            let (x1, y1) = (x + window, y + window);
            s[y1 * stride + x1] - s[y * stride + x1] - s[y1 * stride + x] + s[y * stride + x]
        };
        for y in 0..h {
            for x in 0..w {
                let m = rect(&s1, x, y) / n;
                let var = (rect(&s2, x, y) / n - m * m).max(0.0);
                let i = (y * w + x) * nc + ch;
                mean[i] = (m + shift) as f32;
                std[i] = var.sqrt() as f32;
            }
        }
    }
    Ok((
        Image::new(w, h, nc, mean)?,
        Image::new(w, h, nc, std)?,
    ))
}

/// Box-window mean with mirrored borders (used for the RGB training target).
pub fn box_mean(img: &Image, window: usize) -> Result<Image> {
    local_moments(img, window).map(|(m, _)| m)
}

/// Local zero-mean/unit-variance decomposition of an image.
pub fn decompose(img: &Image, params: DecomposeParams) -> Result<Decomposition> {
    params.validate()?;
    let (mean, std) = local_moments(img, params.window)?;
    let eps = params.epsilon;
    let texture = {
        let centered = img.zip_map(&mean, |v, m| v - m)?;
        centered.zip_map(&std, |d, s| d / (s + eps))?
    };
    let detail = texture.zip_map(&std, |t, s| t * s)?;
    Ok(Decomposition {
        mean,
        std,
        texture,
        detail,
        window: params.window,
        epsilon: eps,
    })
}

/// Extracts the texture patch of side `roi` at every level around the level-0
/// pixel `center`, plus the mean values used by the bypass.
///
/// At level `l` the patch is centered on `center >> l` and spans
/// `[c - roi/2, c - roi/2 + roi)`; out-of-range samples are mirrored.
pub fn extract_patch(
    pyr: &DecomposedPyramid,
    center: (usize, usize),
    roi: usize,
    bypass: BypassSource,
) -> MultiScalePatch {
    let half = (roi / 2) as isize;
    let mut patches = Vec::with_capacity(pyr.n_levels());
    let mut values = Vec::with_capacity(pyr.n_levels());
    for (l, level) in pyr.levels.iter().enumerate() {
        let cx = (center.0 >> l) as isize;
        let cy = (center.1 >> l) as isize;
        let tex = &level.texture;
        let patch = Image::from_fn_gray(roi, roi, |x, y| {
            tex.get_reflect(cx - half + x as isize, cy - half + y as isize, 0)
        });
        patches.push(patch);
        let src = match bypass {
            BypassSource::AllLevels => level,
            BypassSource::Level0 => &pyr.levels[0],
        };
        let (bx, by) = match bypass {
            BypassSource::AllLevels => (cx as usize, cy as usize),
            BypassSource::Level0 => center,
        };
        values.push(src.mean.get(bx, by, 0));
    }
    MultiScalePatch {
        patches,
        bypass: values,
        center,
        roi,
    }
}
