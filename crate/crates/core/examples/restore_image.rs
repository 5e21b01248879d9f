//! Restores an image with a checkpoint, or with an untrained toy model when
//! none is given, applying prompts one after another.
//!
//! ```text
//! cargo run --release --example restore_image -- input.png output.png [checkpoint.bin] [prompt ...]
//! ```

use restorer::data::{read_image, write_image};
use restorer::metrics::psnr;
use restorer::model::{load_checkpoint, ModelConfig, Restorer};
use restorer::Result;

fn main() -> Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.len() < 2 {
        return Err(restorer::Error::Usage("usage: restore_image INPUT OUTPUT [CHECKPOINT] [PROMPT...]".into()));
    }
    let mut rest: Vec<&str> = args[2..].iter().map(String::as_str).collect();
    let model = match rest.first() {
        Some(path) if path.ends_with(".bin") => load_checkpoint(rest.remove(0), None)?,
        _ => Restorer::build(ModelConfig::toy(), 0)?,
    };
    let prompts = rest;
    let prompts = if prompts.is_empty() { vec!["noise"] } else { prompts };
    let input = read_image(&args[0])?;
    let output = model.restore_iterative(&input, &prompts)?;
    write_image(&output, &args[1])?;
    println!(
        "restored {:?} with prompts {prompts:?}; PSNR against input {:.2} dB",
        input.shape(),
        psnr(&output, &input, 1.0)?
    );
    Ok(())
}
