//! Trains the toy network on synthetic noise, writes metrics.csv and a
//! checkpoint, then resumes for a few more steps.
//!
//! ```text
//! cargo run --release --example train_toy -- [out_dir] [steps]
//! ```

use restorer::data::DegradationKind;
use restorer::model::{read_checkpoint, ModelConfig, Restorer};
use restorer::train::{held_out_metrics, DataSpec, LossConfig, TrainConfig, Trainer, CHECKPOINT_FILE};
use restorer::Result;

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let out = std::path::PathBuf::from(args.next().unwrap_or_else(|| "toy_run".into()));
    let steps: usize = args.next().map(|s| s.parse().expect("steps must be a number")).unwrap_or(64);

    let (train, test) = DataSpec::new(64, 8, 64, &[DegradationKind::Noise], 1).generate()?;
    let cfg = TrainConfig {
        max_steps: Some(steps),
        ..TrainConfig::toy()
    };
    let model = Restorer::build(ModelConfig::toy(), 0)?;
    let (before, _) = held_out_metrics(&model, &test)?;
    let mut t = Trainer::new(model, cfg.clone(), LossConfig::default())?;
    t.fit(&train, &test, Some(&out))?;
    let (after, _) = held_out_metrics(t.model(), &test)?;
    println!("{} steps: held-out PSNR {before:.3} -> {after:.3} dB", t.step());

    let ckpt = read_checkpoint(out.join(CHECKPOINT_FILE))?;
    let more = TrainConfig {
        max_steps: Some(steps + 8),
        ..cfg
    };
    let mut resumed = Trainer::resume(ckpt, more, LossConfig::default())?;
    resumed.fit(&train, &test, Some(&out))?;
    println!("resumed to step {}; log in {}", resumed.step(), out.display());
    Ok(())
}
