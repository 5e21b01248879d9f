//! Trains briefly on two degradations and compares restoration under
//! correct and swapped prompts.
//!
//! ```text
//! cargo run --release --example prompt_evaluation -- [steps]
//! ```

use restorer::data::DegradationKind;
use restorer::model::{ModelConfig, Restorer};
use restorer::train::{evaluate, train, DataSpec, EvalTable, LossConfig, PromptPolicy, TrainConfig};
use restorer::Result;

fn main() -> Result<()> {
    let steps: usize = std::env::args().nth(1).map(|s| s.parse().expect("steps must be a number")).unwrap_or(100);
    let data = DataSpec::new(128, 16, 64, &[DegradationKind::Noise, DegradationKind::LowLight], 3);
    let (tr, te) = data.generate()?;
    let cfg = TrainConfig {
        max_steps: Some(steps),
        ..TrainConfig::toy()
    };
    let (model, _) = train(Restorer::build(ModelConfig::toy(), 0)?, &tr, &te, &cfg, &LossConfig::default(), None)?;
    let reports = [PromptPolicy::Correct, PromptPolicy::Swapped]
        .into_iter()
        .map(|p| evaluate(&model, &te, p))
        .collect::<Result<Vec<_>>>()?;
    print!("{}", EvalTable(reports));
    Ok(())
}
