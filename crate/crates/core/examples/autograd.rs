//! Reverse-mode gradients on the tape, checked against finite differences.
//!
//! ```text
//! cargo run --example autograd
//! ```

use restorer::gradcheck::{check_gradients, random_projection, GradCheck};
use restorer::{ConvOptions, Result, Tape, Tensor};

fn main() -> Result<()> {
    // loss = mean(gelu(x · w)) for a 2 × 3 input
    let x = Tensor::new([2, 3], vec![0.5, -1.0, 2.0, 0.0, 1.5, -0.5])?;
    let w = Tensor::new([3, 1], vec![0.2, -0.4, 0.1])?;
    let tape = Tape::new();
    let (xv, wv) = (tape.leaf(&x.with_requires_grad()), tape.leaf(&w.with_requires_grad()));
    let loss = tape.mean(tape.gelu(tape.matmul(xv, wv)?)?)?;
    let grads = tape.backward(loss)?;
    println!("loss      = {:.6}", tape.item(loss)?);
    println!("dloss/dw  = {:?}", grads.get(wv).unwrap_or(&[]));

    // The same machinery checks any composite against central differences.
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
    let img = Tensor::randn([2, 6, 6], 1.0, &mut rng)?;
    let k = Tensor::randn([4, 2, 3, 3], 0.3, &mut rng)?;
    let report = check_gradients(
        |t, v| {
            let y = t.conv2d(v[0], v[1], None, ConvOptions::new(2, 1))?;
            random_projection(t, t.gelu(y)?, 7)
        },
        &[img, k],
        &GradCheck::default(),
    )?;
    println!(
        "conv2d+gelu gradient check: {} coordinates, max relative error {:.2e}",
        report.coords_checked, report.max_rel_error
    );
    Ok(())
}
