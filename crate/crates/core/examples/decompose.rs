//! Pyramid and local normalization of a synthetic NIR image.
//!
//! ```text
//! cargo run --example decompose [-- <out-dir>]
//! ```

use nircolor::preprocess::{build_pyramid, DecomposeParams, DecomposedPyramid};
use nircolor::synthetic::smooth_field;
use nircolor::{decompose, save_image, Image};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn stats(img: &Image) -> (f32, f32) {
    img.data().iter().fold((f32::MAX, f32::MIN), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

fn main() -> nircolor::Result<()> {
    let out = std::env::args().nth(1).map(Into::into).unwrap_or_else(|| std::env::temp_dir().join("nircolor-decompose"));
    std::fs::create_dir_all(&out).expect("output directory");

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let base = smooth_field(128, 96, 0.2, 0.8, &mut rng);
    let nir = Image::from_fn_gray(128, 96, |x, y| {
        let stripes = if (x / 6) % 2 == 0 { 0.05 } else { -0.05 };
        base.get(x, y, 0) + if y > 48 { stripes } else { 0.0 }
    });

    let params = DecomposeParams { window: 17, epsilon: 1e-4 };
    let d = decompose(&nir, params)?;
    let err = d.reconstruct().data().iter().zip(nir.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f32::max);
    println!("level 0, window {}: max reconstruction error {err:.1e}", params.window);
    for (name, img) in [("mean", &d.mean), ("std", &d.std), ("texture", &d.texture), ("detail", &d.detail)] {
        let (lo, hi) = stats(img);
        println!("  {name:<8} range [{lo:+.4}, {hi:+.4}]");
    }
    save_image(&nir, out.join("nir.png"), 16)?;
    save_image(&d.mean, out.join("mean.png"), 16)?;
    save_image(&d.texture.map(|v| 0.5 + 0.1 * v), out.join("texture.png"), 16)?;

    let pyr = build_pyramid(&nir, 3)?;
    let dp = DecomposedPyramid::new(&nir, 3, params)?;
    for (l, (level, dec)) in pyr.levels.iter().zip(&dp.levels).enumerate() {
        let (lo, hi) = stats(&dec.texture);
        println!("pyramid level {l}: {}x{}, texture range [{lo:+.3}, {hi:+.3}]", level.width(), level.height());
    }
    println!("wrote images to {}", out.display());
    Ok(())
}
