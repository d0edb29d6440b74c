//! Full colorization chain on one image: raw estimate (fast and per-pixel
//! paths), joint bilateral filtering and detail transfer.
//!
//! ```text
//! cargo run --release --example colorize [-- <out-dir>]
//! ```

use std::time::Instant;

use nircolor::inference::{colorize_raw, colorize_raw_fast};
use nircolor::nn::InitScheme;
use nircolor::postprocess::{add_details, joint_bilateral_with_stats, BilateralParams};
use nircolor::synthetic::affine_set;
use nircolor::topology::build_model;
use nircolor::{decompose, save_image, DecomposeParams};

fn main() -> nircolor::Result<()> {
    let out = std::env::args().nth(1).map(Into::into).unwrap_or_else(|| std::env::temp_dir().join("nircolor-colorize"));
    std::fs::create_dir_all(&out).expect("output directory");
    let nir = affine_set(1, 64, 64, 3).remove(0).nir;

    // An untrained model: the point here is the pipeline, not the colors.
    let mut model = build_model::<f32>("net-1-9-2-bp".parse()?, 17, InitScheme::He, 9)?;
    model.fusion.bias = vec![0.5, 0.4, 0.3];
    let params = DecomposeParams { window: 17, epsilon: 1e-4 };

    let t = Instant::now();
    let fast = colorize_raw_fast(&model, &nir, params)?;
    let t_fast = t.elapsed();
    let t = Instant::now();
    let slow = colorize_raw(&model, &nir, params)?;
    let t_slow = t.elapsed();
    let diff = fast.image.data().iter().zip(slow.image.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f32::max);
    println!("fast path {t_fast:?} ({} fragments, gap {}), per-pixel {t_slow:?}, max diff {diff:.1e}", fast.passes, fast.gap);

    let bp = BilateralParams::new(17.0, 0.005)?;
    let (filtered, fallbacks) = joint_bilateral_with_stats(&fast.image, &nir, bp)?;
    let detail = decompose(&nir, params)?.detail;
    let result = add_details(&filtered, &detail, 1.0)?;
    println!("bilateral grid: sigma_g {} sigma_f {}, {fallbacks} empty-cell fallbacks", bp.sigma_g, bp.sigma_f);

    save_image(&nir, out.join("nir.png"), 16)?;
    save_image(&fast.image.clamp_unit(), out.join("raw.png"), 16)?;
    save_image(&result, out.join("colorized.png"), 16)?;
    println!("wrote nir.png, raw.png, colorized.png to {}", out.display());
    Ok(())
}
