//! Architecture configuration, presets and the flat `key=value` form used
//! by checkpoints and config files.

use std::fmt::Write as _;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::attention::{head_dim, pooling_matrix, AttentionVariant, Affinity, ConnectMode};
use crate::dcffn::{FfnConfig, FfnVariant};
use crate::embedding::{StereoEmbedConfig, TokenGeometry};
use crate::error::{Error, Result};
use crate::prompts::DEFAULT_PROMPT_SEED;

/// One encoder/attention stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageConfig {
    /// Output channels of the stage's downsampling conv.
    pub width: usize,
    pub p: usize,
    pub d: usize,
    pub heads: usize,
    /// Attention blocks in the stage.
    pub layers: usize,
}

/// Named architecture presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// Full-size network on 256×256 inputs.
    Paper,
    /// Desk-scale network on 64×64 inputs.
    Toy,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_lowercase().as_str() {
            "paper" => Ok(Preset::Paper),
            "toy" => Ok(Preset::Toy),
            other => Err(Error::Config(format!("unknown preset {other:?} (expected paper or toy)"))),
        }
    }
}

/// Where attention queries come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PromptMode {
    /// Encoded degradation label (TP).
    #[default]
    Text,
    /// One learned query shared by all inputs (LP).
    Learnable,
}

impl PromptMode {
    pub fn name(self) -> &'static str {
        match self {
            PromptMode::Text => "text",
            PromptMode::Learnable => "learnable",
        }
    }

    pub fn row_label(self) -> &'static str {
        match self {
            PromptMode::Text => "TP",
            PromptMode::Learnable => "LP",
        }
    }
}

impl FromStr for PromptMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_lowercase().as_str() {
            "text" | "tp" => Ok(PromptMode::Text),
            "learnable" | "lp" => Ok(PromptMode::Learnable),
            other => Err(Error::Config(format!("unknown prompt mode {other:?}"))),
        }
    }
}

/// Full network description.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Square input side.
    pub image_size: usize,
    /// Width of the full-resolution convolutions.
    pub stem: usize,
    /// Token embedding width `D`, shared by all stages.
    pub dim: usize,
    pub stages: Vec<StageConfig>,
    pub attention: AttentionVariant,
    pub affinity: Affinity,
    pub ffn: FfnVariant,
    pub ffn_expansion: f64,
    pub connect: ConnectMode,
    pub prompt: PromptMode,
    pub prompt_seed: u64,
}

const fn stage(width: usize, p: usize, d: usize, heads: usize, layers: usize) -> StageConfig {
    StageConfig { width, p, d, heads, layers }
}

/// Attention blocks per toy stage.
pub const TOY_LAYERS: [usize; 4] = [1, 1, 1, 1];

impl ModelConfig {
    pub fn preset(preset: Preset) -> Self {
        match preset {
            Preset::Paper => ModelConfig {
                image_size: 256,
                stem: 64,
                dim: 512,
                stages: vec![
                    stage(128, 16, 16, 2, 3),
                    stage(128, 8, 16, 2, 4),
                    stage(256, 4, 32, 4, 6),
                    stage(512, 4, 16, 8, 3),
                ],
                ..Self::defaults()
            },
            Preset::Toy => ModelConfig {
                image_size: 64,
                stem: 16,
                dim: 64,
                stages: vec![
                    stage(32, 8, 4, 2, TOY_LAYERS[0]),
                    stage(32, 4, 4, 2, TOY_LAYERS[1]),
                    stage(64, 2, 8, 4, TOY_LAYERS[2]),
                    stage(128, 2, 4, 8, TOY_LAYERS[3]),
                ],
                ..Self::defaults()
            },
        }
    }

    fn defaults() -> Self {
        ModelConfig {
            image_size: 0,
            stem: 0,
            dim: 0,
            stages: Vec::new(),
            attention: AttentionVariant::Aaa,
            affinity: Affinity::Negative,
            ffn: FfnVariant::Dcffn3d,
            ffn_expansion: 2.0,
            connect: ConnectMode::On,
            prompt: PromptMode::Text,
            prompt_seed: DEFAULT_PROMPT_SEED,
        }
    }

    pub fn paper() -> Self {
        Self::preset(Preset::Paper)
    }

    pub fn toy() -> Self {
        Self::preset(Preset::Toy)
    }

    /// Input channels of stage `i`.
    pub fn stage_in_channels(&self, i: usize) -> usize {
        if i == 0 {
            3
        } else {
            self.stages[i - 1].width
        }
    }

    /// Width of the two full-resolution convs in stage `i`.
    pub fn stage_mid_channels(&self, i: usize) -> usize {
        if i == 0 {
            self.stem
        } else {
            self.stages[i - 1].width
        }
    }

    /// `[C, H, W]` entering stage `i`.
    pub fn stage_in_shape(&self, i: usize) -> [usize; 3] {
        let s = self.image_size >> i;
        [self.stage_in_channels(i), s, s]
    }

    /// `[C, H, W]` leaving stage `i`.
    pub fn stage_out_shape(&self, i: usize) -> [usize; 3] {
        let s = self.image_size >> (i + 1);
        [self.stages[i].width, s, s]
    }

    pub fn embed_config(&self, i: usize) -> StereoEmbedConfig {
        let st = &self.stages[i];
        StereoEmbedConfig {
            p: st.p,
            d: st.d,
            dim: self.dim,
            conv_kernel: 3,
            stage_index: i + 1,
        }
    }

    pub fn ffn_config(&self, i: usize) -> FfnConfig {
        let st = &self.stages[i];
        let mut c = FfnConfig::new(self.ffn, self.dim, st.p, st.d);
        c.expansion = self.ffn_expansion;
        c
    }

    /// Token grid of stage `i`.
    pub fn geometry(&self, i: usize) -> Result<TokenGeometry> {
        let [c, h, w] = self.stage_out_shape(i);
        TokenGeometry::new(c, h, w, self.stages[i].p, self.stages[i].d)
    }

    /// Checks every divisibility constraint, naming the one that fails.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.stages.is_empty() {
            return bad("at least one stage is required".into());
        }
        if self.stem == 0 || self.dim == 0 {
            return bad("stem and embedding width must be positive".into());
        }
        let levels = self.stages.len();
        if self.image_size == 0 || self.image_size % (1 << levels) != 0 {
            return bad(format!(
                "image size {} must be a positive multiple of 2^{levels} for {levels} downsampling stages",
                self.image_size
            ));
        }
        for (i, st) in self.stages.iter().enumerate() {
            let n = i + 1;
            let [c, h, _] = self.stage_out_shape(i);
            if st.width == 0 || st.p == 0 || st.d == 0 {
                return bad(format!("stage {n}: width, p and d must be positive"));
            }
            if h % st.p != 0 {
                return bad(format!("stage {n}: p={} must divide the spatial side {h} (p | side)", st.p));
            }
            if c % st.d != 0 {
                return bad(format!("stage {n}: d={} must divide the channel count {c} (d | channels)", st.d));
            }
            head_dim(self.dim, st.heads)
                .map_err(|_| Error::Config(format!("stage {n}: H={} must divide D={} (H | D)", st.heads, self.dim)))?;
            self.ffn_config(i).hidden().map_err(|e| Error::Config(format!("stage {n}: {e}")))?;
        }
        if self.connect == ConnectMode::On {
            for i in 1..levels {
                let (a, b) = (self.geometry(i - 1)?, self.geometry(i)?);
                if a.count() != b.count() {
                    pooling_matrix(&a, &b).map_err(|e| Error::Config(format!("stage {} connection: {e}", i + 1)))?;
                }
            }
        }
        if !(self.ffn_expansion > 0.0 && self.ffn_expansion.is_finite()) {
            return bad("ffn expansion must be positive".into());
        }
        Ok(())
    }

    /// Canonical `key=value` lines; parsing them back yields an equal config.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k}={v}").expect("write to String");
        kv("image_size", self.image_size.to_string());
        kv("stem", self.stem.to_string());
        kv("dim", self.dim.to_string());
        kv("stages", self.stages.len().to_string());
        for (i, st) in self.stages.iter().enumerate() {
            let n = i + 1;
            kv(&format!("stage{n}.width"), st.width.to_string());
            kv(&format!("stage{n}.p"), st.p.to_string());
            kv(&format!("stage{n}.d"), st.d.to_string());
            kv(&format!("stage{n}.heads"), st.heads.to_string());
            kv(&format!("stage{n}.layers"), st.layers.to_string());
        }
        kv("attention", self.attention.name().into());
        kv("affinity", self.affinity.name().into());
        kv("ffn", self.ffn.name().into());
        kv("ffn_expansion", format!("{:?}", self.ffn_expansion));
        kv(
            "connect",
            match self.connect {
                ConnectMode::On => "on",
                ConnectMode::Off => "off",
            }
            .into(),
        );
        kv("prompt", self.prompt.name().into());
        kv("prompt_seed", self.prompt_seed.to_string());
        s
    }

    /// Parses the output of [`ModelConfig::to_kv`].
    pub fn from_kv(text: &str) -> Result<Self> {
        let mut c = ModelConfig::defaults();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                location: format!("model config line {}", i + 1),
                detail: format!("expected key=value, found {line:?}"),
            })?;
            if !c.set(k.trim(), v.trim())? {
                return Err(Error::Config(format!("unknown model key {k:?}")));
            }
        }
        Ok(c)
    }

    /// Applies one `key=value` override. Returns `false` for keys that are
    /// not model keys so callers can route them elsewhere.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
        }
        match key {
            "preset" => {
                let fresh = ModelConfig::preset(value.parse()?);
                self.image_size = fresh.image_size;
                self.stem = fresh.stem;
                self.dim = fresh.dim;
                self.stages = fresh.stages;
            }
            "image_size" => self.image_size = num(key, value)?,
            "stem" => self.stem = num(key, value)?,
            "dim" => self.dim = num(key, value)?,
            "stages" => {
                let n: usize = num(key, value)?;
                self.stages.resize(n, stage(0, 0, 0, 0, 0));
            }
            "attention" => self.attention = value.parse()?,
            "affinity" => self.affinity = value.parse()?,
            "ffn" => self.ffn = value.parse()?,
            "ffn_expansion" => self.ffn_expansion = num(key, value)?,
            "connect" => {
                self.connect = match value {
                    "on" | "true" => ConnectMode::On,
                    "off" | "false" => ConnectMode::Off,
                    _ => return Err(Error::Config(format!("connect must be on or off, got {value:?}"))),
                }
            }
            "prompt" => self.prompt = value.parse()?,
            "prompt_seed" => self.prompt_seed = num(key, value)?,
            "layers" => {
                let layers: Vec<usize> = value.split(',').map(|v| num(key, v.trim())).collect::<Result<_>>()?;
                if layers.len() != self.stages.len() {
                    return Err(Error::Config(format!("layers needs {} values", self.stages.len())));
                }
                self.stages.iter_mut().zip(layers).for_each(|(s, l)| s.layers = l);
            }
            _ => {
                let Some((stage_key, field)) = key.strip_prefix("stage").and_then(|r| r.split_once('.')) else {
                    return Ok(false);
                };
                let idx: usize = num(key, stage_key)?;
                if idx == 0 || idx > self.stages.len() {
                    return Err(Error::Config(format!("{key}: no stage {idx}")));
                }
                let st = &mut self.stages[idx - 1];
                let v: usize = num(key, value)?;
                match field {
                    "width" => st.width = v,
                    "p" => st.p = v,
                    "d" => st.d = v,
                    "heads" => st.heads = v,
                    "layers" => st.layers = v,
                    _ => return Ok(false),
                }
            }
        }
        Ok(true)
    }

    /// Stable hex digest of the canonical form.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.to_kv().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}
