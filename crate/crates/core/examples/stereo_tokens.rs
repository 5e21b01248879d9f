//! Cutting a feature map into p × p × d stereo tokens, embedding them and
//! reverting back to a map.
//!
//! ```text
//! cargo run --example stereo_tokens
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use restorer::embedding::{
    partition, patch_revert, stereo_embed, unpartition, EmbedWeights, RevertWeights, StereoEmbedConfig,
};
use restorer::{ParamStore, Result, Tape, Tensor};

fn main() -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let feature = Tensor::randn([8, 16, 16], 1.0, &mut rng)?;
    let tape = Tape::no_grad();
    let x = tape.constant(&feature);

    let (tokens, g) = partition(&tape, x, 4, 2)?;
    println!("map {:?} -> tokens {:?} ({} tokens of volume {})", feature.shape(), tape.shape(tokens), g.count(), g.volume());
    let back = tape.value(unpartition(&tape, tokens, &g)?);
    println!("partition then unpartition is exact: {}", back.bit_eq(&feature));

    let cfg = StereoEmbedConfig::new(4, 2, 32)?;
    let mut store = ParamStore::new();
    EmbedWeights::init(&mut store, "embed", &cfg, g.count(), &mut rng)?;
    RevertWeights::init(&mut store, "revert", &cfg, &mut rng)?;
    let b = store.bind(&tape);
    let seq = stereo_embed(&tape, x, &cfg, &EmbedWeights::bind(&b, "embed")?)?;
    println!("embedded sequence {:?}", tape.shape(seq.tokens));
    let map = patch_revert(&tape, &seq, 8, &RevertWeights::bind(&b, "revert")?)?;
    println!("reverted map {:?}", tape.shape(map));
    Ok(())
}
