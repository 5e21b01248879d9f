//! Runs one ablation axis on the toy preset with a small budget.
//!
//! ```text
//! cargo run --release --example ablation -- [attention|ffn|prompt|aaa_connect|affinity] [steps]
//! ```

use restorer::data::DegradationKind;
use restorer::model::ModelConfig;
use restorer::train::{run_ablation, AblationAxis, AblationSettings, DataSpec, LossConfig, TrainConfig};
use restorer::Result;

fn main() -> Result<()> {
    let mut args = std::env::args().skip(1);
    let axis: AblationAxis = args.next().as_deref().unwrap_or("affinity").parse()?;
    let steps: usize = args.next().map(|s| s.parse().expect("steps must be a number")).unwrap_or(8);
    let settings = AblationSettings {
        model: ModelConfig::toy(),
        train: TrainConfig {
            max_steps: Some(steps),
            batch_size: 4,
            ..TrainConfig::toy()
        },
        loss: LossConfig::default(),
        data: DataSpec::new(32, 8, 64, &[DegradationKind::Noise, DegradationKind::Rain], 0),
        init_seed: 0,
    };
    println!("{}", run_ablation(axis, &settings)?);
    Ok(())
}
