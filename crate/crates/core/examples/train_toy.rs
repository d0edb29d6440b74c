//! Trains net-1-9-2-bp on a synthetic set where RGB is an affine function of
//! NIR, after a short learning-rate search.
//!
//! ```text
//! cargo run --release --example train_toy [-- <epochs>]
//! ```

use nircolor::inference::colorize_raw_fast;
use nircolor::metrics::rmse;
use nircolor::synthetic::affine_set;
use nircolor::trainer::{lr_search, train, EpochRecord, TrainConfig, TrainOptions, TrainingPair};

fn main() -> nircolor::Result<()> {
    let epochs: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(400);
    let set = affine_set(30, 48, 48, 7);
    let mut cfg = TrainConfig {
        spec: "net-1-9-2-bp".parse()?,
        epochs,
        patches_per_epoch: 16,
        window: 9,
        seed: 1,
        checkpoint_every: 0,
        val_every: 50,
        val_patches: 256,
        ..TrainConfig::default()
    };
    let params = cfg.decompose_params();
    let pairs = set
        .iter()
        .map(|s| TrainingPair::new(&s.name, s.nir.clone(), s.rgb.clone(), 1, params))
        .collect::<nircolor::Result<Vec<_>>>()?;
    let (train_pairs, val_pairs) = pairs.split_at(24);

    let (best, trials) = lr_search(&[1e-2, 1e-3, 1e-4], 30, &cfg, train_pairs)?;
    for t in &trials {
        match t.smoothed_loss {
            Some(l) => println!("lr {:.0e}: smoothed loss {l:.5}", t.lr),
            None => println!("lr {:.0e}: diverged", t.lr),
        }
    }
    println!("selected lr {best:.0e}");
    cfg.lr = best;

    let progress = |r: &EpochRecord| {
        if let Some(v) = r.val_mse {
            println!("epoch {:>5}  lr {:.2e}  train {:.5}  val {v:.5}", r.epoch, r.lr, r.train_mse);
        }
    };
    let opts = TrainOptions { validation: val_pairs, progress: Some(&progress), ..Default::default() };
    let out = train(&cfg, train_pairs, &opts)?;
    if let Some((epoch, v)) = out.best_val {
        println!("best validation MSE {v:.5} at epoch {epoch}");
    }
    let mut total = 0.0;
    for s in &set[24..] {
        total += rmse(&colorize_raw_fast(&out.model, &s.nir, params)?.image, &s.rgb)?;
    }
    println!("held-out raw RMSE {:.4}", total / 6.0);
    Ok(())
}
