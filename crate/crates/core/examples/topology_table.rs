//! The twelve evaluated topologies with their receptive field, coherence
//! gap and parameter count.
//!
//! ```text
//! cargo run --example topology_table
//! ```

use nircolor::nn::{InitScheme, Tensor};
use nircolor::topology::{build_model, required_roi, Model};
use nircolor::TopologySpec;

fn main() -> nircolor::Result<()> {
    println!("{:<14} {:>6} {:>5} {:>4} {:>9} {:>8}", "topology", "levels", "roi", "gap", "features", "params");
    for spec in TopologySpec::table() {
        let model: Model<f32> = build_model(spec, 33, InitScheme::He, 0)?;
        let roi = spec.roi();
        let map = model.branch_forward(0, Tensor::new(1, roi, roi, vec![0.0; roi * roi])?)?;
        assert_eq!(map.dims(), (spec.branch_features(), 1, 1));
        println!(
            "{:<14} {:>6} {:>5} {:>4} {:>9} {:>8}",
            spec.to_string(),
            spec.n_levels,
            roi,
            spec.coherence_gap(),
            spec.fusion_inputs(),
            model.param_count()
        );
    }
    println!("\nroi for 3x3 kernels by (convs, pools):");
    for (c, p) in [(6, 1), (9, 2), (8, 3), (12, 3), (15, 4)] {
        println!("  {c:>2} convs, {p} pools -> {}", required_roi(c, p, 3)?);
    }
    let custom: TopologySpec = "net-2-8-3-bp".parse()?;
    println!("\nparsed {custom}: roi {}, gap {}", custom.roi(), custom.coherence_gap());
    Ok(())
}
