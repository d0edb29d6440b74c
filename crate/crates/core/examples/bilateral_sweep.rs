//! Effect of the joint bilateral filter parameters on S-CIELAB, on scenes
//! whose raw estimate carries a blocky interleaving artifact.
//!
//! ```text
//! cargo run --release --example bilateral_sweep
//! ```

use nircolor::metrics::{scielab, MetricReport, DEFAULT_SAMPLES_PER_DEGREE};
use nircolor::postprocess::{add_details, joint_bilateral, BilateralParams};
use nircolor::synthetic::sweep_set;
use nircolor::{decompose, DecomposeParams};

fn main() -> nircolor::Result<()> {
    let params = DecomposeParams { window: 9, epsilon: 1e-4 };
    let scenes = sweep_set(4, 96, 96, 1, params)?;
    let details = scenes.iter().map(|s| Ok(decompose(&s.nir, params)?.detail)).collect::<nircolor::Result<Vec<_>>>()?;

    let unfiltered: Vec<(String, f64)> = scenes
        .iter()
        .map(|s| Ok((s.name.clone(), scielab(s.raw.as_ref().unwrap(), &s.rgb, DEFAULT_SAMPLES_PER_DEGREE)?)))
        .collect::<nircolor::Result<_>>()?;
    println!("raw estimate, no filtering: {:.3}", MetricReport::from_scores(unfiltered).mean);

    println!("{:>8} {:>8} {:>10} {:>8}", "sigma_g", "sigma_f", "S-CIELAB", "std");
    for sg in [2.0, 5.0, 17.0, 65.0] {
        for sf in [0.0003, 0.005, 0.08] {
            let bp = BilateralParams::new(sg, sf)?;
            let scores = scenes
                .iter()
                .zip(&details)
                .map(|(s, det)| {
                    let filtered = joint_bilateral(s.raw.as_ref().unwrap(), &s.nir, bp)?;
                    Ok((s.name.clone(), scielab(&add_details(&filtered, det, 1.0)?, &s.rgb, DEFAULT_SAMPLES_PER_DEGREE)?))
                })
                .collect::<nircolor::Result<Vec<_>>>()?;
            let r = MetricReport::from_scores(scores);
            println!("{sg:>8} {sf:>8} {:>10.3} {:>8.3}", r.mean, r.std);
        }
    }
    Ok(())
}
