//! The four feed-forward variants on the same stereo-token sequence.
//!
//! ```text
//! cargo run --example feed_forward
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use restorer::dcffn::{ffn_forward, FfnConfig, FfnParams, FfnVariant};
use restorer::embedding::TokenGeometry;
use restorer::{ParamStore, Result, Tape, Tensor};

fn main() -> Result<()> {
    let g = TokenGeometry::new(8, 8, 8, 4, 2)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = Tensor::randn([g.count(), 32], 1.0, &mut rng)?;
    println!("{} tokens of width 32 from an 8×8×8 map (p = 4, d = 2)", g.count());
    for v in FfnVariant::ALL {
        let cfg = FfnConfig::new(v, 32, 4, 2);
        let mut s = ParamStore::new();
        FfnParams::init(&mut s, "f", &cfg, &mut ChaCha8Rng::seed_from_u64(1))?;
        let tape = Tape::no_grad();
        let y = tape.value(ffn_forward(&tape, tape.constant(&x), &FfnParams::bind(&s.bind(&tape), "f")?, &cfg, &g)?);
        let rms = (y.data().iter().map(|v| v * v).sum::<f64>() / y.len() as f64).sqrt();
        println!(
            "{:<16} params {:>6}  MACs {:>8}  output {:?} rms {rms:.4}",
            v.row_label(),
            cfg.param_count()?,
            cfg.macs(g.count())?,
            y.shape()
        );
    }
    Ok(())
}
