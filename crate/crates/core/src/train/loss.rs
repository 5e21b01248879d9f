//! Training objective: smooth L1 plus a weighted perceptual term.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;

use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{read_tensor_file, write_tensor_file};
use crate::ops::ConvOptions;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Source of features for the perceptual term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PerceptualMode {
    Off,
    /// Fixed, seeded random-conv pyramid.
    #[default]
    Surrogate,
    /// Conv pyramid weights loaded from a tensor file.
    External,
}

impl PerceptualMode {
    pub fn name(self) -> &'static str {
        match self {
            PerceptualMode::Off => "off",
            PerceptualMode::Surrogate => "surrogate",
            PerceptualMode::External => "external",
        }
    }
}

impl fmt::Display for PerceptualMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PerceptualMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "off" | "none" => Ok(PerceptualMode::Off),
            "surrogate" => Ok(PerceptualMode::Surrogate),
            "external" => Ok(PerceptualMode::External),
            _ => Err(Error::Config(format!(
                "unknown perceptual mode '{s}' (expected off, surrogate or external)"
            ))),
        }
    }
}

pub const DEFAULT_LAMBDA: f64 = 0.04;
pub const DEFAULT_FEATURE_SEED: u64 = 0xFEA7_0001;

#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    /// Weight of the perceptual term.
    pub lambda: f64,
    pub smooth_l1_beta: f64,
    pub perceptual: PerceptualMode,
    /// Seed of the surrogate extractor.
    pub feature_seed: u64,
    /// Weights file for [`PerceptualMode::External`].
    pub feature_weights: Option<PathBuf>,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda: DEFAULT_LAMBDA,
            smooth_l1_beta: 1.0,
            perceptual: PerceptualMode::Surrogate,
            feature_seed: DEFAULT_FEATURE_SEED,
            feature_weights: None,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be a finite value >= 0, got {}", self.lambda)));
        }
        if !(self.smooth_l1_beta > 0.0 && self.smooth_l1_beta.is_finite()) {
            return Err(Error::Config(format!("smooth_l1_beta must be positive, got {}", self.smooth_l1_beta)));
        }
        Ok(())
    }

    /// The configured extractor, or `None` when the perceptual term is off.
    pub fn extractor(&self) -> Result<Option<Arc<dyn FeatureExtractor>>> {
        self.validate()?;
        Ok(match self.perceptual {
            PerceptualMode::Off => None,
            PerceptualMode::Surrogate => Some(Arc::new(ConvPyramid::surrogate(self.feature_seed)?)),
            PerceptualMode::External => {
                let path = self.feature_weights.as_ref().ok_or_else(|| {
                    Error::Usage("external perceptual mode needs a feature weights file".into())
                })?;
                Some(Arc::new(ConvPyramid::load(path)?))
            }
        })
    }
}

/// Fixed feature network for the perceptual term.
pub trait FeatureExtractor: Send + Sync {
    /// Feature maps of a `[3, H, W]` image at one or more scales.
    fn features(&self, tape: &Tape, image: Var) -> Result<Vec<Var>>;
}

/// Stack of 3×3 conv + GELU layers; layer 0 has stride 1, later layers stride 2.
#[derive(Debug, Clone)]
pub struct ConvPyramid {
    layers: Vec<(Tensor, Tensor)>,
}

/// Channel widths of the surrogate pyramid.
const SURROGATE_WIDTHS: [usize; 4] = [3, 8, 16, 16];

impl ConvPyramid {
    pub fn new(layers: Vec<(Tensor, Tensor)>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("feature pyramid needs at least one layer".into()));
        }
        let mut c = 3;
        for (i, (w, b)) in layers.iter().enumerate() {
            match *w.shape() {
                [co, ci, 3, 3] if ci == c && b.shape() == [co] => c = co,
                _ => {
                    return Err(Error::Config(format!(
                        "feature layer {i}: weight {:?} / bias {:?} do not form a 3×3 conv from {c} channels",
                        w.shape(),
                        b.shape()
                    )))
                }
            }
        }
        Ok(ConvPyramid { layers })
    }

    /// Three-scale pyramid with He-scaled Gaussian weights from `seed`.
    pub fn surrogate(seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = SURROGATE_WIDTHS
            .windows(2)
            .map(|p| {
                let (ci, co) = (p[0], p[1]);
                let w = Tensor::randn([co, ci, 3, 3], (2.0 / (9 * ci) as f64).sqrt(), &mut rng)?;
                Ok((w, Tensor::zeros([co])?))
            })
            .collect::<Result<_>>()?;
        Self::new(layers)
    }

    pub fn scales(&self) -> usize {
        self.layers.len()
    }

    /// Reads `scale{i}.weight` / `scale{i}.bias` tensors.
    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let mut t = read_tensor_file(path)?;
        let mut layers = Vec::new();
        for i in 0.. {
            let (Some(w), Some(b)) = (t.shift_remove(&format!("scale{i}.weight")), t.shift_remove(&format!("scale{i}.bias")))
            else {
                break;
            };
            layers.push((w, b));
        }
        if let Some(name) = t.keys().next() {
            return Err(Error::Config(format!("unexpected tensor {name} in feature weights file")));
        }
        Self::new(layers)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let mut t = IndexMap::new();
        for (i, (w, b)) in self.layers.iter().enumerate() {
            t.insert(format!("scale{i}.weight"), w.clone());
            t.insert(format!("scale{i}.bias"), b.clone());
        }
        write_tensor_file(path, &t)
    }
}

impl FeatureExtractor for ConvPyramid {
    fn features(&self, tape: &Tape, image: Var) -> Result<Vec<Var>> {
        let mut x = image;
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, (w, b)) in self.layers.iter().enumerate() {
            let stride = if i == 0 { 1 } else { 2 };
            x = tape.gelu(tape.conv2d(x, tape.constant(w), Some(tape.constant(b)), ConvOptions::new(stride, 1))?)?;
            out.push(x);
        }
        Ok(out)
    }
}

/// Mean of `0.5·x²/β` where `|x| < β`, else `|x| − 0.5·β`.
pub fn smooth_l1(tape: &Tape, pred: Var, target: Var, beta: f64) -> Result<Var> {
    tape.smooth_l1(pred, target, beta)
}

/// Sum over scales of the mean squared feature difference.
pub fn perceptual_loss(tape: &Tape, pred: Var, target: Var, extractor: Option<&dyn FeatureExtractor>) -> Result<Var> {
    let ex = extractor.ok_or_else(|| Error::Usage("perceptual loss requested but the extractor is off".into()))?;
    let fp = ex.features(tape, pred)?;
    let ft = ex.features(tape, target)?;
    if fp.is_empty() || fp.len() != ft.len() {
        return Err(Error::Config("feature extractor returned no or mismatched scales".into()));
    }
    let mut total = tape.mse(fp[0], ft[0])?;
    for (a, b) in fp.iter().zip(&ft).skip(1) {
        total = tape.add(total, tape.mse(*a, *b)?)?;
    }
    Ok(total)
}

/// `smooth_l1 + λ·perceptual`; the perceptual term is dropped when off.
pub fn total_loss(
    tape: &Tape,
    pred: Var,
    target: Var,
    cfg: &LossConfig,
    extractor: Option<&dyn FeatureExtractor>,
) -> Result<Var> {
    cfg.validate()?;
    let base = smooth_l1(tape, pred, target, cfg.smooth_l1_beta)?;
    if cfg.perceptual == PerceptualMode::Off {
        return Ok(base);
    }
    let p = perceptual_loss(tape, pred, target, extractor)?;
    tape.add(base, tape.scale(p, cfg.lambda)?)
}
