//! RMSE, plain CIELAB and S-CIELAB on a few controlled perturbations.
//!
//! ```text
//! cargo run --example metrics
//! ```

use nircolor::metrics::{cielab, delta_e, rmse, scielab, MetricReport};
use nircolor::Image;

fn main() -> nircolor::Result<()> {
    let (w, h) = (64, 64);
    let base = Image::from_fn_rgb(w, h, |x, _| [0.3 + 0.4 * x as f32 / w as f32, 0.5, 0.4]);
    let perturb = |period: usize| {
        Image::from_fn_rgb(w, h, |x, y| {
            let s = if ((x / period) + (y / period)).is_multiple_of(2) { 0.08 } else { -0.08 };
            let p = [base.get(x, y, 0), base.get(x, y, 1), base.get(x, y, 2)];
            [p[0] + s, p[1] - s, p[2]]
        })
    };

    println!("delta E black/white: {:.3}", delta_e([0.0; 3], [1.0; 3]));
    println!("{:<22} {:>8} {:>8} {:>9}", "chroma checkerboard", "RMSE", "CIELAB", "S-CIELAB");
    let mut rows = Vec::new();
    for period in [1, 2, 4, 8, 16] {
        let p = perturb(period);
        let s = scielab(&p, &base, 23.0)?;
        println!("{:<22} {:>8.4} {:>8.3} {:>9.3}", format!("period {period} px"), rmse(&p, &base)?, cielab(&p, &base)?, s);
        rows.push((format!("period_{period}"), s));
    }
    println!("\nviewing distance (samples per degree) for period 2:");
    for spd in [5.0, 23.0, 60.0] {
        println!("  spd {spd:>4}: {:.3}", scielab(&perturb(2), &base, spd)?);
    }
    print!("\n{}", MetricReport::from_scores(rows).to_csv("scielab"));
    Ok(())
}
