//! Analytic FLOPs and parameter counts for the presets.
//!
//! ```text
//! cargo run --example flop_report [paper|toy]
//! ```

use restorer::model::{count_flops, count_params, ModelConfig, Preset};
use restorer::Result;

fn main() -> Result<()> {
    let preset: Preset = std::env::args().nth(1).as_deref().unwrap_or("paper").parse()?;
    let cfg = ModelConfig::preset(preset);
    let report = count_flops(&cfg)?;
    println!("{report}");
    for kind in ["conv", "conv3d", "conv_t", "linear", "attention", "ffn", "pool"] {
        println!("{kind:<10} {:>8.3} GFLOPs", report.total_kind(kind) as f64 / 1e9);
    }
    println!("parameters {}", count_params(&cfg)?);
    Ok(())
}
