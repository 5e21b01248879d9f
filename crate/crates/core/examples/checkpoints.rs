//! Saving and loading checkpoints, and what corruption or a config
//! mismatch looks like.
//!
//! ```text
//! cargo run --example checkpoints
//! ```

use restorer::model::{load_checkpoint, save_checkpoint, ModelConfig, Restorer};
use restorer::Result;

fn main() -> Result<()> {
    let dir = std::env::temp_dir().join(format!("restorer-ckpt-{}", std::process::id()));
    std::fs::create_dir_all(&dir).map_err(|e| restorer::Error::Io { path: dir.clone(), source: e })?;
    let path = dir.join("toy.bin");
    let model = Restorer::build(ModelConfig::toy(), 5)?;
    save_checkpoint(&model, &path)?;
    let back = load_checkpoint(&path, Some(&ModelConfig::toy()))?;
    println!("fingerprint {}; parameters identical: {}", back.config().fingerprint(), back.params().bit_eq(model.params()));

    let mut other = ModelConfig::toy();
    other.stages[0].heads = 4;
    println!("other config: {}", load_checkpoint(&path, Some(&other)).unwrap_err());

    let mut bytes = std::fs::read(&path).expect("just written");
    bytes[100] ^= 1;
    std::fs::write(&path, &bytes).expect("writable");
    println!("flipped bit: {}", load_checkpoint(&path, None).unwrap_err());
    let _ = std::fs::remove_dir_all(&dir);
    Ok(())
}
