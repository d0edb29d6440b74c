//! Image-quality measures: RMSE and S-CIELAB.
//!
//! # S-CIELAB constants
//!
//! Source: X. Zhang and B. A. Wandell, "A spatial extension of CIELAB for
//! digital color image reproduction", SID Symposium Digest, 1996.
//!
//! Opponent space from CIE XYZ:
//!
//! | channel | X      | Y     | Z      |
//! |---------|--------|-------|--------|
//! | O1 lum  | 0.279  | 0.72  | -0.107 |
//! | O2 r-g  | -0.449 | 0.29  | -0.077 |
//! | O3 b-y  | 0.086  | -0.59 | 0.501  |
//!
//! Spatial kernels are weighted sums of `exp(-(x^2 + y^2) / s^2)` with the
//! spread `s` in degrees of visual angle:
//!
//! | channel | weights                | spreads (deg)          |
//! |---------|------------------------|------------------------|
//! | lum     | 0.921, 0.105, -0.108   | 0.0283, 0.133, 4.336   |
//! | r-g     | 0.531, 0.330           | 0.0392, 0.494          |
//! | b-y     | 0.488, 0.371           | 0.0536, 0.386          |
//!
//! Each Gaussian is normalized to unit sum over its truncated support and
//! the weighted sum is rescaled to unit sum, so uniform fields pass through
//! unchanged. Display encoding is sRGB with a D65 white.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::{reflect, Image};

pub const DEFAULT_SAMPLES_PER_DEGREE: f64 = 23.0;

pub const OPPONENT_FROM_XYZ: [[f64; 3]; 3] = [
    [0.279, 0.72, -0.107],
    [-0.449, 0.29, -0.077],
    [0.086, -0.59, 0.501],
];

/// `(weights, spreads in degrees)` for the three opponent channels.
pub const KERNELS: [(&[f64], &[f64]); 3] = [
    (&[0.921, 0.105, -0.108], &[0.0283, 0.133, 4.336]),
    (&[0.531, 0.330], &[0.0392, 0.494]),
    (&[0.488, 0.371], &[0.0536, 0.386]),
];

/// Linear sRGB to XYZ, D65.
pub const XYZ_FROM_LINEAR_RGB: [[f64; 3]; 3] = [
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
];

/// Root-mean-square difference over all samples (all pixels and channels
/// jointly), accumulated in f64.
pub fn rmse(a: &Image, b: &Image) -> Result<f64> {
    a.check_same_shape(b, "rmse")?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok((sum / a.data().len() as f64).sqrt())
}

pub fn srgb_to_linear(c: f64) -> f64 {
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn mat_vec(m: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    [0, 1, 2].map(|r| m[r][0] * v[0] + m[r][1] * v[1] + m[r][2] * v[2])
}

fn invert(m: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    let mut inv = [[0.0; 3]; 3];
    for (r, row) in inv.iter_mut().enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            // cofactor of (c, r)
            let (r0, r1) = ([1, 0, 0][c], [2, 2, 1][c]);
            let (c0, c1) = ([1, 0, 0][r], [2, 2, 1][r]);
            let minor = m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
            let sign = if (r + c) % 2 == 0 { 1.0 } else { -1.0 };
            *v = sign * minor / det;
        }
    }
    inv
}

pub fn srgb_to_xyz(rgb: [f64; 3]) -> [f64; 3] {
    mat_vec(&XYZ_FROM_LINEAR_RGB, rgb.map(srgb_to_linear))
}

/// Reference white: XYZ of sRGB (1, 1, 1).
pub fn white_point() -> [f64; 3] {
    srgb_to_xyz([1.0; 3])
}

pub fn xyz_to_lab(xyz: [f64; 3], white: [f64; 3]) -> [f64; 3] {
    const D: f64 = 6.0 / 29.0;
    let f = |t: f64| if t > D * D * D { t.cbrt() } else { t / (3.0 * D * D) + 4.0 / 29.0 };
    let (fx, fy, fz) = (f(xyz[0] / white[0]), f(xyz[1] / white[1]), f(xyz[2] / white[2]));
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

fn distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// CIELAB ΔE*ab between two sRGB colors.
pub fn delta_e(a: [f64; 3], b: [f64; 3]) -> f64 {
    let w = white_point();
    distance(xyz_to_lab(srgb_to_xyz(a), w), xyz_to_lab(srgb_to_xyz(b), w))
}

fn check_rgb(a: &Image, b: &Image) -> Result<()> {
    a.check_same_shape(b, "metric")?;
    if a.channels() != 3 {
        return Err(Error::shape(format!("color metrics need 3 channels, got {}", a.channels())));
    }
    Ok(())
}

fn pixel(img: &Image, i: usize) -> [f64; 3] {
    let d = &img.data()[3 * i..3 * i + 3];
    [d[0] as f64, d[1] as f64, d[2] as f64]
}

/// Mean per-pixel CIELAB ΔE*ab without spatial filtering.
pub fn cielab(a: &Image, b: &Image) -> Result<f64> {
    check_rgb(a, b)?;
    let n = a.width() * a.height();
    let sum: f64 = (0..n).into_par_iter().map(|i| delta_e(pixel(a, i), pixel(b, i))).sum();
    Ok(sum / n as f64)
}

/// Half-width of the truncated kernel support in samples.
pub fn kernel_radius(samples_per_degree: f64) -> usize {
    ((samples_per_degree / 2.0).ceil() as usize).max(1)
}

/// 1-D unit-sum taps of one Gaussian component `exp(-x^2 / s^2)`.
pub fn gaussian_taps(spread_deg: f64, samples_per_degree: f64) -> Vec<f64> {
    let r = kernel_radius(samples_per_degree) as isize;
    let s = spread_deg * samples_per_degree;
    let taps: Vec<f64> = (-r..=r).map(|x| (-((x * x) as f64) / (s * s)).exp()).collect();
    let sum: f64 = taps.iter().sum();
    taps.iter().map(|t| t / sum).collect()
}

fn convolve_separable(plane: &[f64], w: usize, h: usize, taps: &[f64]) -> Vec<f64> {
    let r = (taps.len() / 2) as isize;
    let mut tmp = vec![0.0; w * h];
    tmp.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for (x, out) in row.iter_mut().enumerate() {
            *out = taps
                .iter()
                .enumerate()
                .map(|(k, t)| t * plane[y * w + reflect(x as isize + k as isize - r, w)])
                .sum();
        }
    });
    let mut out = vec![0.0; w * h];
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for (x, o) in row.iter_mut().enumerate() {
            *o = taps
                .iter()
                .enumerate()
                .map(|(k, t)| t * tmp[reflect(y as isize + k as isize - r, h) * w + x])
                .sum();
        }
    });
    out
}

/// Applies the channel's sum-of-Gaussians kernel to one opponent plane.
pub fn filter_opponent(plane: &[f64], w: usize, h: usize, channel: usize, samples_per_degree: f64) -> Vec<f64> {
    let (weights, spreads) = KERNELS[channel];
    let total: f64 = weights.iter().sum();
    let mut acc = vec![0.0; w * h];
    for (&wt, &s) in weights.iter().zip(spreads) {
        let part = convolve_separable(plane, w, h, &gaussian_taps(s, samples_per_degree));
        for (a, p) in acc.iter_mut().zip(part) {
            *a += wt / total * p;
        }
    }
    acc
}

/// Filtered CIELAB values for every pixel of an sRGB image.
fn scielab_lab(img: &Image, samples_per_degree: f64) -> Vec<[f64; 3]> {
    let (w, h) = (img.width(), img.height());
    let n = w * h;
    let opp: Vec<[f64; 3]> = (0..n)
        .into_par_iter()
        .map(|i| mat_vec(&OPPONENT_FROM_XYZ, srgb_to_xyz(pixel(img, i))))
        .collect();
    let planes: Vec<Vec<f64>> = (0..3)
        .map(|c| {
            let plane: Vec<f64> = opp.iter().map(|o| o[c]).collect();
            filter_opponent(&plane, w, h, c, samples_per_degree)
        })
        .collect();
    let xyz_from_opp = invert(&OPPONENT_FROM_XYZ);
    let white = white_point();
    (0..n)
        .into_par_iter()
        .map(|i| xyz_to_lab(mat_vec(&xyz_from_opp, [planes[0][i], planes[1][i], planes[2][i]]), white))
        .collect()
}

/// S-CIELAB: mean per-pixel ΔE*ab after filtering both images in opponent
/// space with the visual-system kernels at the given viewing resolution.
pub fn scielab(a: &Image, b: &Image, samples_per_degree: f64) -> Result<f64> {
    check_rgb(a, b)?;
    if !(samples_per_degree.is_finite() && samples_per_degree > 0.0) {
        return Err(Error::invalid(format!("samples per degree must be positive, got {samples_per_degree}")));
    }
    let (la, lb) = (scielab_lab(a, samples_per_degree), scielab_lab(b, samples_per_degree));
    let sum: f64 = la.iter().zip(&lb).map(|(x, y)| distance(*x, *y)).sum();
    Ok(sum / la.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Metric {
    Rmse,
    Scielab { samples_per_degree: f64 },
}

impl Metric {
    pub fn name(&self) -> &'static str {
        match self {
            Metric::Rmse => "rmse",
            Metric::Scielab { .. } => "scielab",
        }
    }

    pub fn evaluate(&self, pred: &Image, target: &Image) -> Result<f64> {
        match *self {
            Metric::Rmse => rmse(pred, target),
            Metric::Scielab { samples_per_degree } => scielab(pred, target, samples_per_degree),
        }
    }
}

/// Per-image scores with their mean and (population) standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub scores: Vec<(String, f64)>,
    pub mean: f64,
    pub std: f64,
}

impl MetricReport {
    pub fn from_scores(scores: Vec<(String, f64)>) -> Self {
        let n = scores.len().max(1) as f64;
        let mean = scores.iter().map(|s| s.1).sum::<f64>() / n;
        let var = scores.iter().map(|s| (s.1 - mean).powi(2)).sum::<f64>() / n;
        MetricReport { scores, mean, std: var.sqrt() }
    }

    /// `name,score` rows followed by `mean` and `std` rows.
    pub fn to_csv(&self, metric: &str) -> String {
        let mut s = format!("image,{metric}\n");
        for (name, v) in &self.scores {
            s += &format!("{name},{v:.9}\n");
        }
        s += &format!("mean,{:.9}\nstd,{:.9}\n", self.mean, self.std);
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rmse_cases() {
        let z = Image::zeros(4, 3, 3).unwrap();
        let o = Image::filled(4, 3, 3, 1.0).unwrap();
        assert_eq!(rmse(&z, &z).unwrap(), 0.0);
        assert_eq!(rmse(&z, &o).unwrap(), 1.0);
        assert!(rmse(&z, &Image::zeros(3, 4, 3).unwrap()).is_err());
    }

    #[test]
    fn matrix_inverse() {
        let inv = invert(&OPPONENT_FROM_XYZ);
        for r in 0..3 {
            for c in 0..3 {
                let v: f64 = (0..3).map(|k| OPPONENT_FROM_XYZ[r][k] * inv[k][c]).sum();
                assert!((v - if r == c { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn white_and_black_lab() {
        let w = white_point();
        assert!((w[1] - 1.0).abs() < 1e-6);
        let lab = xyz_to_lab(w, w);
        assert!((lab[0] - 100.0).abs() < 1e-9 && lab[1].abs() < 1e-9 && lab[2].abs() < 1e-9);
        assert_eq!(xyz_to_lab([0.0; 3], w), [0.0, 0.0, 0.0]);
    }

    #[test]
    fn taps_sum_to_one() {
        for spd in [1.0, 23.0, 60.0] {
            for (_, spreads) in KERNELS {
                for &s in spreads {
                    let t = gaussian_taps(s, spd);
                    assert!((t.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                    assert_eq!(t.len(), 2 * kernel_radius(spd) + 1);
                }
            }
        }
    }

    #[test]
    fn report_stats() {
        let r = MetricReport::from_scores(vec![("a".into(), 1.0), ("b".into(), 3.0)]);
        assert_eq!((r.mean, r.std), (2.0, 1.0));
        assert!(r.to_csv("rmse").ends_with("mean,2.000000000\nstd,1.000000000\n"));
    }
}
