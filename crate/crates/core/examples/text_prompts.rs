//! Encoding degradation labels into prompt vectors, with the built-in
//! encoder and with a table of externally computed embeddings.
//!
//! ```text
//! cargo run --example text_prompts
//! ```

use indexmap::IndexMap;
use restorer::prompts::{
    format_table, BuiltinEncoder, ExternalEncoder, PromptEmbedding, TextEncoder, BUILTIN_VOCABULARY,
    DEFAULT_PROMPT_SEED,
};
use restorer::Result;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn main() -> Result<()> {
    let enc = BuiltinEncoder::new(64, DEFAULT_PROMPT_SEED)?;
    let vecs: Vec<_> = BUILTIN_VOCABULARY.iter().map(|l| enc.encode(l)).collect::<Result<_>>()?;
    println!("cosine similarity between built-in prompts:");
    print!("{:>10}", "");
    BUILTIN_VOCABULARY.iter().for_each(|l| print!("{l:>10}"));
    println!();
    for (l, a) in BUILTIN_VOCABULARY.iter().zip(&vecs) {
        print!("{l:>10}");
        vecs.iter().for_each(|b| print!("{:>10.3}", dot(a.data(), b.data())));
        println!();
    }

    let p = PromptEmbedding::new(&enc, "  Low Light ", 16)?;
    println!("'{}' replicated to {:?}", p.label, p.replicated.shape());

    // A 3-wide table projected to the 64-wide model space.
    let mut table = IndexMap::new();
    table.insert("rain".to_string(), vec![0.9, 0.1, 0.0]);
    table.insert("haze".to_string(), vec![0.1, 0.9, 0.2]);
    print!("table file:\n{}", format_table(3, &table));
    let ext = ExternalEncoder::from_table(table, 3, 64, 1)?;
    let (r, h) = (ext.encode("rain")?, ext.encode("haze")?);
    println!("external rain·haze = {:.3}", dot(r.data(), h.data()));
    Ok(())
}
