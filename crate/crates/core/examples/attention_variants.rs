//! Negative versus vanilla affinity, and the four attention variants.
//!
//! ```text
//! cargo run --example attention_variants
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use restorer::attention::{
    all_axis_attention, channel_attention_tokens, omni_attention, spatial_attention, AAAParams, Affinity,
};
use restorer::{ParamStore, Result, Tape, Tensor};

fn main() -> Result<()> {
    let (n, d, h) = (5, 8, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let tokens = Tensor::randn([n, d], 1.0, &mut rng)?;
    let prompt = Tensor::randn([1, d], 1.0, &mut rng)?;
    let prompt = restorer::prompts::replicate(&prompt, n)?;

    for affinity in [Affinity::Vanilla, Affinity::Negative] {
        let mut s = ParamStore::new();
        AAAParams::init(&mut s, "a", d, h, affinity, &mut ChaCha8Rng::seed_from_u64(4))?;
        let tape = Tape::no_grad();
        let p = AAAParams::bind(&s.bind(&tape), "a", h)?;
        let a = all_axis_attention(&tape, tape.constant(&tokens), tape.constant(&prompt), &p, affinity)?;
        let w = tape.value(a.weights);
        let row: Vec<String> = w.data()[..n].iter().map(|v| format!("{v:.3}")).collect();
        println!("{:<32} head 0, row 0: [{}]", affinity.row_label(), row.join(", "));
    }

    let mut s = ParamStore::new();
    AAAParams::init(&mut s, "a", d, h, Affinity::Negative, &mut rng)?;
    AAAParams::init(&mut s, "c", d, h, Affinity::Negative, &mut rng)?;
    let tape = Tape::no_grad();
    let b = s.bind(&tape);
    let (pa, pc) = (AAAParams::bind(&b, "a", h)?, AAAParams::bind(&b, "c", h)?);
    let (x, t) = (tape.constant(&tokens), tape.constant(&prompt));
    let variants = [
        ("all-axis", all_axis_attention(&tape, x, t, &pa, Affinity::Negative)?),
        ("spatial", spatial_attention(&tape, x, &pa, Affinity::Negative)?),
        ("channel", channel_attention_tokens(&tape, x, &pa, Affinity::Negative)?),
        ("omni", omni_attention(&tape, x, &pa, &pc, Affinity::Negative)?),
    ];
    for (name, a) in variants {
        let w = tape.value(a.weights);
        let cols = *w.shape().last().unwrap();
        let worst = w.data().chunks(cols).map(|r| (r.iter().sum::<f64>() - 1.0).abs()).fold(0.0, f64::max);
        println!("{name:<9} weights {:?}, output {:?}, max |row sum - 1| = {worst:.1e}", w.shape(), tape.shape(a.out));
    }
    Ok(())
}
