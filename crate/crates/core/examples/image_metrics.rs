//! PSNR and SSIM under increasing Gaussian noise.
//!
//! ```text
//! cargo run --example image_metrics
//! ```

use restorer::data::{degrade, sample_rng, synth_clean, DegradationParams, DegradationSpec};
use restorer::metrics::{psnr, ssim};
use restorer::Result;

fn main() -> Result<()> {
    let clean = synth_clean(64, &mut sample_rng(7, 0))?;
    println!("{:>6}  {:>9}  {:>6}", "sigma", "PSNR", "SSIM");
    for sigma in [0.0_f64, 0.02, 0.05, 0.1, 0.2, 0.4] {
        let noisy = if sigma == 0.0 {
            clean.clone()
        } else {
            degrade(&clean, &DegradationSpec::new(DegradationParams::Noise { sigma }, 1))?
        };
        println!("{sigma:>6.2}  {:>9.3}  {:>6.4}", psnr(&noisy, &clean, 1.0)?, ssim(&noisy, &clean)?);
    }
    Ok(())
}
