//! Flat `key=value` run configuration shared by the CLI and examples.
//!
//! Keys without a prefix are model keys (see [`ModelConfig::set`]). Other
//! keys are `train.*`, `loss.*`, `data.*`, `init_seed` and `preset`, which
//! resets model, training and data settings to a named preset.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::loss::LossConfig;
use super::trainer::{DataSpec, TrainConfig};
use crate::data::{parse_kinds, DegradationKind};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, Preset};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub loss: LossConfig,
    pub data: DataSpec,
    pub init_seed: u64,
    /// Optional prompt table for an external text encoder.
    pub prompt_table: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::preset(Preset::Toy)
    }
}

impl RunConfig {
    pub fn preset(preset: Preset) -> Self {
        let model = ModelConfig::preset(preset);
        let train = match preset {
            Preset::Paper => TrainConfig::paper(),
            Preset::Toy => TrainConfig::toy(),
        };
        let data = DataSpec::new(256, 64, model.image_size, &DegradationKind::ALL, 0);
        RunConfig {
            model,
            train,
            loss: LossConfig::default(),
            data,
            init_seed: 0,
            prompt_table: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.loss.validate()?;
        if self.data.size != self.model.image_size {
            return Err(Error::Config(format!(
                "data.size {} differs from model image_size {}",
                self.data.size, self.model.image_size
            )));
        }
        Ok(())
    }

    /// Applies one override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
        }
        fn opt_path(v: &str) -> Option<PathBuf> {
            (!v.is_empty() && v != "none").then(|| PathBuf::from(v))
        }
        let (key, value) = (key.trim(), value.trim());
        match key {
            "preset" => *self = RunConfig::preset(value.parse()?),
            "init_seed" => self.init_seed = num(key, value)?,
            "prompt_table" => self.prompt_table = opt_path(value),
            "train.epochs" => self.train.epochs = num(key, value)?,
            "train.max_steps" => {
                self.train.max_steps = if value == "none" { None } else { Some(num(key, value)?) }
            }
            "train.batch_size" => self.train.batch_size = num(key, value)?,
            "train.lr" => self.train.schedule.base = num(key, value)?,
            "train.decay_start" => self.train.schedule.decay_start = num(key, value)?,
            "train.decay_every" => self.train.schedule.decay_every = num(key, value)?,
            "train.seed" => self.train.seed = num(key, value)?,
            "train.checkpoint_every" => self.train.checkpoint_every = num(key, value)?,
            "train.grad_clip" => {
                self.train.grad_clip = if value == "none" { None } else { Some(num(key, value)?) }
            }
            "loss.lambda" => self.loss.lambda = num(key, value)?,
            "loss.smooth_l1_beta" => self.loss.smooth_l1_beta = num(key, value)?,
            "loss.perceptual" => self.loss.perceptual = value.parse()?,
            "loss.feature_seed" => self.loss.feature_seed = num(key, value)?,
            "loss.feature_weights" => self.loss.feature_weights = opt_path(value),
            "data.train" => self.data.train = num(key, value)?,
            "data.test" => self.data.test = num(key, value)?,
            "data.size" => self.data.size = num(key, value)?,
            "data.kinds" => self.data.kinds = parse_kinds(value)?,
            "data.seed" => self.data.seed = num(key, value)?,
            _ => {
                if !self.model.set(key, value)? {
                    return Err(Error::Config(format!("unknown config key {key:?}")));
                }
                if key == "image_size" {
                    self.data.size = self.model.image_size;
                }
            }
        }
        Ok(())
    }

    /// Applies a `key=value` assignment.
    pub fn apply(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Usage(format!("expected key=value, found {assignment:?}")))?;
        self.set(k, v)
    }

    /// Parses config text on top of the toy preset. Blank lines and `#`
    /// comments are ignored.
    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut c = RunConfig::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                location: format!("{source}:{}", i + 1),
                detail: format!("expected key=value, found {line:?}"),
            })?;
            c.set(k, v)?;
        }
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Canonical text; [`RunConfig::parse`] reads it back to an equal value.
    pub fn to_kv(&self) -> String {
        let mut s = self.model.to_kv();
        let mut kv = |k: &str, v: String| writeln!(s, "{k}={v}").expect("write to String");
        let t = &self.train;
        kv("train.epochs", t.epochs.to_string());
        kv("train.max_steps", t.max_steps.map_or("none".into(), |v| v.to_string()));
        kv("train.batch_size", t.batch_size.to_string());
        kv("train.lr", format!("{:?}", t.schedule.base));
        kv("train.decay_start", t.schedule.decay_start.to_string());
        kv("train.decay_every", t.schedule.decay_every.to_string());
        kv("train.seed", t.seed.to_string());
        kv("train.checkpoint_every", t.checkpoint_every.to_string());
        kv("train.grad_clip", t.grad_clip.map_or("none".into(), |v| format!("{v:?}")));
        let l = &self.loss;
        kv("loss.lambda", format!("{:?}", l.lambda));
        kv("loss.smooth_l1_beta", format!("{:?}", l.smooth_l1_beta));
        kv("loss.perceptual", l.perceptual.name().into());
        kv("loss.feature_seed", l.feature_seed.to_string());
        kv("loss.feature_weights", l.feature_weights.as_ref().map_or("none".into(), |p| p.display().to_string()));
        let d = &self.data;
        kv("data.train", d.train.to_string());
        kv("data.test", d.test.to_string());
        kv("data.size", d.size.to_string());
        kv("data.kinds", d.kinds.iter().map(|k| k.name()).collect::<Vec<_>>().join(","));
        kv("data.seed", d.seed.to_string());
        kv("init_seed", self.init_seed.to_string());
        kv("prompt_table", self.prompt_table.as_ref().map_or("none".into(), |p| p.display().to_string()));
        s
    }
}
