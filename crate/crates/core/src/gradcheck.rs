//! Central finite-difference gradient checking.
//!
//! The numeric side only ever evaluates the function on a gradient-free
//! tape, so it shares no code path with the backward rules it checks.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Settings for [`check_gradients`].
#[derive(Debug, Clone)]
pub struct GradCheck {
    pub step: f64,
    /// Denominator floor in `|a − n| / max(|a| + |n|, floor)`.
    pub floor: f64,
    /// Check at most this many coordinates per input (all when `None`).
    pub max_coords: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheck {
    fn default() -> Self {
        GradCheck {
            step: 1e-5,
            floor: 1e-6,
            max_coords: None,
            seed: 0,
        }
    }
}

/// Worst disagreement found by [`check_gradients`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_input: usize,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub coords_checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(floor)
}

/// Compares reverse-mode gradients of the scalar `f(inputs)` against
/// central differences for every input tensor.
pub fn check_gradients<F>(f: F, inputs: &[Tensor], cfg: &GradCheck) -> Result<GradCheckReport>
where
    F: Fn(&Tape, &[Var]) -> Result<Var>,
{
    let tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| tape.leaf(&t.clone().with_requires_grad()))
        .collect();
    let out = f(&tape, &vars)?;
    let grads = tape.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| grads.get_or_zeros(v, t.len()))
        .collect();
    drop(tape);

    let eval = |xs: &[Tensor]| -> Result<f64> {
        let tape = Tape::no_grad();
        let vs: Vec<Var> = xs.iter().map(|t| tape.constant(t)).collect();
        let out = f(&tape, &vs)?;
        tape.item(out)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_input: 0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        coords_checked: 0,
    };
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        let indices: Vec<usize> = match cfg.max_coords {
            Some(m) if m < input.len() => {
                let mut idx = sample(&mut rng, input.len(), m).into_vec();
                idx.sort_unstable();
                idx
            }
            _ => (0..input.len()).collect(),
        };
        for j in indices {
            let orig = input.data()[j];
            work[i].data_mut()[j] = orig + cfg.step;
            let plus = eval(&work)?;
            work[i].data_mut()[j] = orig - cfg.step;
            let minus = eval(&work)?;
            work[i].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * cfg.step);
            let a = analytic[i][j];
            let err = relative_error(a, numeric, cfg.floor);
            if !err.is_finite() {
                return Err(Error::Numeric { op: "gradcheck" });
            }
            report.coords_checked += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst_input = i;
                report.worst_index = j;
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}

/// Reduces any output to a scalar through fixed pseudo-random weights so
/// every output element contributes a distinct gradient.
pub fn random_projection(tape: &Tape, out: Var, seed: u64) -> Result<Var> {
    let shape = tape.shape(out);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = Tensor::uniform(shape, -1.0, 1.0, &mut rng)?;
    let w = tape.constant(&w);
    let prod = tape.mul(out, w)?;
    tape.sum(prod)
}
