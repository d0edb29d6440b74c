//! Independent oracles shared by integration tests.
#![allow(dead_code)]

pub mod gradcheck;

use nircolor::Image;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_image(w: usize, h: usize, c: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Image::new(w, h, c, (0..w * h * c).map(|_| rng.random::<f32>()).collect()).unwrap()
}

/// Direct double sum joint bilateral filter over the whole image.
pub fn brute_force_bilateral(src: &Image, guide: &Image, sigma_g: f64, sigma_f: f64) -> Image {
    let (w, h, c) = (src.width(), src.height(), src.channels());
    let mut out = vec![0.0f32; w * h * c];
    for y in 0..h {
        for x in 0..w {
            let gp = guide.get(x, y, 0) as f64;
            let mut acc = vec![0.0f64; c];
            let mut norm = 0.0f64;
            for qy in 0..h {
                for qx in 0..w {
                    let ds = ((qx as f64 - x as f64).powi(2) + (qy as f64 - y as f64).powi(2)) / (2.0 * sigma_g * sigma_g);
                    let dr = (guide.get(qx, qy, 0) as f64 - gp).powi(2) / (2.0 * sigma_f * sigma_f);
                    let wgt = (-ds - dr).exp();
                    norm += wgt;
                    for (k, a) in acc.iter_mut().enumerate() {
                        *a += wgt * src.get(qx, qy, k) as f64;
                    }
                }
            }
            for k in 0..c {
                out[(y * w + x) * c + k] = (acc[k] / norm) as f32;
            }
        }
    }
    Image::new(w, h, c, out).unwrap()
}

/// Gaussian blur renormalized over the image domain.
pub fn gaussian_blur(src: &Image, sigma: f64) -> Image {
    let flat = Image::filled(src.width(), src.height(), 1, 0.0).unwrap();
    brute_force_bilateral(src, &flat, sigma, 1.0)
}

pub fn max_abs_diff(a: &Image, b: &Image) -> f32 {
    assert!(a.same_shape(b));
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max)
}
