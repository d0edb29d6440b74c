//! Saving, loading and inspecting model files and training checkpoints.
//!
//! ```text
//! cargo run --example model_io
//! ```

use nircolor::nn::InitScheme;
use nircolor::topology::{build_model, load_model, model_to_bytes, save_model, HEADER_LEN, MODEL_MAGIC};
use nircolor::trainer::{load_checkpoint, save_checkpoint, Checkpoint};
use nircolor::TopologySpec;

fn main() -> nircolor::Result<()> {
    let dir = tempfile::tempdir().expect("temp dir");
    let spec: TopologySpec = "net-3-8-3-bp".parse()?;
    let model = build_model::<f32>(spec, 33, InitScheme::He, 42)?;

    let bytes = model_to_bytes(&model)?;
    println!("{spec}: {} parameters, {} bytes on disk", model.param_count(), bytes.len());
    println!("magic {:?}, header {HEADER_LEN} bytes", std::str::from_utf8(MODEL_MAGIC).unwrap());
    let words: Vec<u16> = bytes[4..HEADER_LEN].chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]])).collect();
    println!("version {}, levels/convs/pools/bypass/kernel/filters/window/source = {:?}", words[0], &words[1..9]);

    let path = dir.path().join("model.nirc");
    save_model(&model, &path)?;
    let back = load_model(&path, Some(&spec))?;
    println!("roundtrip identical: {}", back == model);

    let other: TopologySpec = "net-3-8-3".parse()?;
    match load_model(&path, Some(&other)) {
        Err(e) => println!("loading as {other} fails: [{}] {e}", e.kind()),
        Ok(_) => println!("unexpected: loaded as {other}"),
    }

    let ck = Checkpoint { model, epoch: 1234 };
    let ck_path = dir.path().join("ckpt.nirc");
    save_checkpoint(&ck, &ck_path)?;
    let restored = load_checkpoint(&ck_path, None)?;
    println!("checkpoint epoch {} restored, model identical: {}", restored.epoch, restored.model == ck.model);
    Ok(())
}
