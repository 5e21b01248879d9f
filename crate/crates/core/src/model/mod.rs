//! The four-stage restoration network.
//!
//! ```text
//! image ─ enc1 ─ F1 ─ enc2 ─ F2 ─ enc3 ─ F3 ─ enc4 ─ F4
//!          │      │           │           │           │
//!          │   embed→blocks→revert  (same per stage, AAA output
//!          │      │   feeds the next stage's tokens)  │
//!          │      + F1        + F2        + F3        + F4
//!          │      │           │           │           │
//! out ← proj ← dec1 ←──── dec2 ←──── dec3 ←──── dec4 ←─┘
//! ```
//!
//! Each encoder stage runs two 3×3 conv + GELU layers at its input
//! resolution and a stride-2 3×3 conv. Each decoder level upsamples with a
//! 2×2 stride-2 transposed conv, concatenates the matching skip, fuses with
//! a 1×1 conv and runs two 3×3 conv + GELU layers. The final 3×3 projection
//! is added to the input image.

mod checkpoint;
mod config;
mod flops;

pub use checkpoint::{
    decode_tensor_file, encode_tensor_file, load_checkpoint, read_checkpoint, read_tensor_file, save_checkpoint,
    write_checkpoint, write_tensor_file, Checkpoint, CHECKPOINT_VERSION,
};
pub use config::{ModelConfig, Preset, PromptMode, StageConfig, TOY_LAYERS};
pub use flops::{count_flops, FlopEntry, FlopReport};

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::{
    aaa_connect, all_axis_attention, channel_attention_tokens, omni_attention, spatial_attention, AAAParams, Affinity,
    AttentionVariant,
};
use crate::dcffn::{ffn_forward, FfnParams};
use crate::embedding::{
    patch_revert, stereo_embed, EmbedWeights, RevertWeights, StereoTokenSequence, TokenGeometry, LN_EPS,
};
use crate::error::{Error, Result};
use crate::ops::ConvOptions;
use crate::params::{Bindings, ParamStore};
use crate::prompts::{BuiltinEncoder, TextEncoder};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Anything that maps a degraded image and its label to a restored image.
pub trait RestorationModel {
    fn restore(&self, degraded: &Tensor, label: &str) -> Result<Tensor>;
}

/// Shapes observed during one forward pass.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ForwardTrace {
    /// `[C, H, W]` of each encoder stage output.
    pub encoder_outputs: Vec<[usize; 3]>,
    /// Stereo tokens per stage.
    pub token_counts: Vec<usize>,
    /// `[C, H, W]` of each decoder level output, deepest first.
    pub decoder_outputs: Vec<[usize; 3]>,
    pub output: [usize; 3],
}

/// A configured network with its parameters and prompt encoder.
#[derive(Clone)]
pub struct Restorer {
    config: ModelConfig,
    params: ParamStore,
    encoder: Arc<dyn TextEncoder>,
}

impl std::fmt::Debug for Restorer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Restorer")
            .field("fingerprint", &self.config.fingerprint())
            .field("params", &self.params.numel())
            .finish()
    }
}

fn conv_std(fan_in: usize, gain: f64) -> f64 {
    (gain / fan_in as f64).sqrt()
}

fn init_conv<R: Rng + ?Sized>(
    s: &mut ParamStore,
    name: &str,
    c_out: usize,
    c_in: usize,
    k: usize,
    gain: f64,
    rng: &mut R,
) -> Result<()> {
    s.normal(&format!("{name}.weight"), &[c_out, c_in, k, k], conv_std(c_in * k * k, gain), rng)?;
    s.constant(&format!("{name}.bias"), &[c_out], 0.0)
}

fn init_norm(s: &mut ParamStore, name: &str, dim: usize) -> Result<()> {
    s.constant(&format!("{name}.gamma"), &[dim], 1.0)?;
    s.constant(&format!("{name}.beta"), &[dim], 0.0)
}

/// Affinity used for a given attention operator's parameters. The head mix
/// only applies to token-axis attention.
fn param_affinity(affinity: Affinity, channel: bool) -> Affinity {
    if channel && affinity == Affinity::Projection {
        Affinity::Vanilla
    } else {
        affinity
    }
}

/// He-style gain for convs followed by GELU.
const RELU_GAIN: f64 = 2.0;

fn init_params(config: &ModelConfig, seed: u64) -> Result<ParamStore> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = &mut rng;
    let mut s = ParamStore::new();
    let levels = config.stages.len();
    for i in 0..levels {
        let (cin, mid, w) = (config.stage_in_channels(i), config.stage_mid_channels(i), config.stages[i].width);
        init_conv(&mut s, &format!("enc{}.conv1", i + 1), mid, cin, 3, RELU_GAIN, r)?;
        init_conv(&mut s, &format!("enc{}.conv2", i + 1), mid, mid, 3, RELU_GAIN, r)?;
        init_conv(&mut s, &format!("enc{}.down", i + 1), w, mid, 3, 1.0, r)?;
    }
    for i in 0..levels {
        let st = config.stages[i];
        let n = config.geometry(i)?.count();
        let pre = format!("stage{}", i + 1);
        let ecfg = config.embed_config(i);
        EmbedWeights::init(&mut s, &format!("{pre}.embed"), &ecfg, n, r)?;
        for j in 0..st.layers {
            let b = format!("{pre}.block{}", j + 1);
            init_norm(&mut s, &format!("{b}.norm1"), config.dim)?;
            match config.attention {
                AttentionVariant::Aaa | AttentionVariant::Spatial => {
                    AAAParams::init(&mut s, &format!("{b}.attn"), config.dim, st.heads, config.affinity, r)?
                }
                AttentionVariant::Channel => AAAParams::init(
                    &mut s,
                    &format!("{b}.attn"),
                    config.dim,
                    st.heads,
                    param_affinity(config.affinity, true),
                    r,
                )?,
                AttentionVariant::Osa => {
                    AAAParams::init(&mut s, &format!("{b}.attn.spatial"), config.dim, st.heads, config.affinity, r)?;
                    AAAParams::init(
                        &mut s,
                        &format!("{b}.attn.channel"),
                        config.dim,
                        st.heads,
                        param_affinity(config.affinity, true),
                        r,
                    )?;
                }
            }
            init_norm(&mut s, &format!("{b}.norm2"), config.dim)?;
            FfnParams::init(&mut s, &format!("{b}.ffn"), &config.ffn_config(i), r)?;
        }
        RevertWeights::init(&mut s, &format!("{pre}.revert"), &ecfg, r)?;
    }
    for i in (0..levels).rev() {
        let c = config.stages[i].width;
        let ct = config.stage_mid_channels(i);
        let pre = format!("dec{}", i + 1);
        s.normal(&format!("{pre}.up.weight"), &[c, ct, 2, 2], conv_std(c, 1.0), r)?;
        s.constant(&format!("{pre}.up.bias"), &[ct], 0.0)?;
        init_conv(&mut s, &format!("{pre}.fuse"), ct, 2 * ct, 1, RELU_GAIN, r)?;
        init_conv(&mut s, &format!("{pre}.conv1"), ct, ct, 3, RELU_GAIN, r)?;
        init_conv(&mut s, &format!("{pre}.conv2"), ct, ct, 3, RELU_GAIN, r)?;
    }
    // Zero projection: the untrained network is the identity map.
    s.constant("out.weight", &[3, config.stem, 3, 3], 0.0)?;
    s.constant("out.bias", &[3], 0.0)?;
    if config.prompt == crate::model::PromptMode::Learnable {
        s.normal("prompt.query", &[1, config.dim], 0.02, r)?;
    }
    Ok(s)
}

/// Exact parameter count of a configuration, computed without building it.
pub fn count_params(config: &ModelConfig) -> Result<usize> {
    config.validate()?;
    let conv = |co: usize, ci: usize, k: usize| co * ci * k * k + co;
    let mut total = 0;
    let levels = config.stages.len();
    for i in 0..levels {
        let (cin, mid, w) = (config.stage_in_channels(i), config.stage_mid_channels(i), config.stages[i].width);
        total += conv(mid, cin, 3) + conv(mid, mid, 3) + conv(w, mid, 3);
        let st = config.stages[i];
        let ecfg = config.embed_config(i);
        total += EmbedWeights::param_count(&ecfg, config.geometry(i)?.count());
        total += RevertWeights::param_count(&ecfg);
        let attn = match config.attention {
            AttentionVariant::Aaa | AttentionVariant::Spatial => {
                AAAParams::param_count(config.dim, st.heads, config.affinity)
            }
            AttentionVariant::Channel => {
                AAAParams::param_count(config.dim, st.heads, param_affinity(config.affinity, true))
            }
            AttentionVariant::Osa => {
                AAAParams::param_count(config.dim, st.heads, config.affinity)
                    + AAAParams::param_count(config.dim, st.heads, param_affinity(config.affinity, true))
            }
        };
        total += st.layers * (4 * config.dim + attn + config.ffn_config(i).param_count()?);
        let ct = mid;
        total += w * ct * 4 + ct + conv(ct, 2 * ct, 1) + 2 * conv(ct, ct, 3);
    }
    total += conv(3, config.stem, 3);
    if config.prompt == PromptMode::Learnable {
        total += config.dim;
    }
    Ok(total)
}

impl Restorer {
    /// Builds a network with seeded initialization and the built-in prompt encoder.
    pub fn build(config: ModelConfig, seed: u64) -> Result<Self> {
        let params = init_params(&config, seed)?;
        let encoder = Arc::new(BuiltinEncoder::new(config.dim, config.prompt_seed)?);
        Ok(Restorer { config, params, encoder })
    }

    /// Wraps existing parameters; names and shapes must match `config`.
    pub fn from_params(config: ModelConfig, params: ParamStore) -> Result<Self> {
        let layout = init_params(&config, 0)?;
        if layout.len() != params.len() {
            return Err(Error::Incompatible(format!(
                "expected {} tensors for this config, found {}",
                layout.len(),
                params.len()
            )));
        }
        for ((a, ta), (b, tb)) in layout.iter().zip(params.iter()) {
            if a != b || ta.shape() != tb.shape() {
                return Err(Error::Incompatible(format!(
                    "tensor {b} {:?} does not match expected {a} {:?}",
                    tb.shape(),
                    ta.shape()
                )));
            }
        }
        let encoder = Arc::new(BuiltinEncoder::new(config.dim, config.prompt_seed)?);
        Ok(Restorer { config, params, encoder })
    }

    /// Replaces the prompt encoder; its width must equal `D`.
    pub fn with_encoder(mut self, encoder: Arc<dyn TextEncoder>) -> Result<Self> {
        if encoder.width() != self.config.dim {
            return Err(Error::Config(format!(
                "prompt encoder width {} differs from embedding width {}",
                encoder.width(),
                self.config.dim
            )));
        }
        self.encoder = encoder;
        Ok(self)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn into_params(self) -> ParamStore {
        self.params
    }

    pub fn encoder(&self) -> &dyn TextEncoder {
        self.encoder.as_ref()
    }

    /// The `[1, D]` prompt vector for `label`.
    pub fn prompt_vector(&self, label: &str) -> Result<Tensor> {
        self.encoder.encode(label)
    }

    /// Forward pass on a `[3, S, S]` image recorded on `tape`.
    pub fn forward(&self, tape: &Tape, b: &Bindings, image: Var, label: &str) -> Result<Var> {
        self.forward_traced(tape, b, image, label).map(|(v, _)| v)
    }

    /// Forward pass that also reports intermediate shapes.
    pub fn forward_traced(&self, tape: &Tape, b: &Bindings, image: Var, label: &str) -> Result<(Var, ForwardTrace)> {
        let cfg = &self.config;
        let s = cfg.image_size;
        let shape = tape.shape(image);
        if shape != [3, s, s] {
            return Err(Error::shape("forward", format!("expected a [3, {s}, {s}] image, got {shape:?}")));
        }
        let mut trace = ForwardTrace::default();
        let prompt = match cfg.prompt {
            PromptMode::Text => tape.constant(&self.prompt_vector(label)?),
            PromptMode::Learnable => b.get("prompt.query")?,
        };

        let conv = |x: Var, name: &str, stride: usize, pad: usize| -> Result<Var> {
            tape.conv2d(
                x,
                b.get(&format!("{name}.weight"))?,
                Some(b.get(&format!("{name}.bias"))?),
                ConvOptions::new(stride, pad),
            )
        };
        let conv_gelu = |x: Var, name: &str| -> Result<Var> { tape.gelu(conv(x, name, 1, 1)?) };

        let levels = cfg.stages.len();
        let mut x = image;
        let mut full_res = None;
        let mut feats = Vec::with_capacity(levels);
        for i in 0..levels {
            let pre = format!("enc{}", i + 1);
            let m = conv_gelu(x, &format!("{pre}.conv1"))?;
            let m = conv_gelu(m, &format!("{pre}.conv2"))?;
            if i == 0 {
                full_res = Some(m);
            }
            let f = conv(m, &format!("{pre}.down"), 2, 1)?;
            trace.encoder_outputs.push(shape3(tape, f));
            feats.push(f);
            x = f;
        }

        let mut skips = Vec::with_capacity(levels);
        let mut prev: Option<(Var, TokenGeometry)> = None;
        for (i, &f) in feats.iter().enumerate() {
            let pre = format!("stage{}", i + 1);
            let ecfg = cfg.embed_config(i);
            let seq = stereo_embed(tape, f, &ecfg, &EmbedWeights::bind(b, &format!("{pre}.embed"))?)?;
            let g = seq.geometry;
            trace.token_counts.push(g.count());
            let mut t = aaa_connect(tape, prev.as_ref().map(|(v, pg)| (*v, pg)), seq.tokens, &g, cfg.connect)?;
            let queries = tape.repeat_rows(prompt, g.count())?;
            for j in 0..cfg.stages[i].layers {
                t = self.block(tape, b, &format!("{pre}.block{}", j + 1), t, queries, i, &g)?;
            }
            prev = Some((t, g));
            let rev = patch_revert(
                tape,
                &StereoTokenSequence { tokens: t, geometry: g },
                cfg.stages[i].width,
                &RevertWeights::bind(b, &format!("{pre}.revert"))?,
            )?;
            skips.push(tape.add(f, rev)?);
        }

        let full_res = full_res.expect("at least one stage");
        let mut y = skips[levels - 1];
        for i in (0..levels).rev() {
            let pre = format!("dec{}", i + 1);
            let target = if i > 0 { skips[i - 1] } else { full_res };
            y = tape.conv_transpose2d(y, b.get(&format!("{pre}.up.weight"))?, Some(b.get(&format!("{pre}.up.bias"))?), 2, 0)?;
            y = tape.concat(&[y, target], 0)?;
            y = conv(y, &format!("{pre}.fuse"), 1, 0)?;
            y = conv_gelu(y, &format!("{pre}.conv1"))?;
            y = conv_gelu(y, &format!("{pre}.conv2"))?;
            trace.decoder_outputs.push(shape3(tape, y));
        }
        let out = tape.add(conv(y, "out", 1, 1)?, image)?;
        trace.output = shape3(tape, out);
        Ok((out, trace))
    }

    /// One pre-norm attention + FFN block.
    #[allow(clippy::too_many_arguments)]
    fn block(&self, tape: &Tape, b: &Bindings, pre: &str, t: Var, queries: Var, stage: usize, g: &TokenGeometry) -> Result<Var> {
        let cfg = &self.config;
        let heads = cfg.stages[stage].heads;
        let norm = |x: Var, name: &str| -> Result<Var> {
            tape.layer_norm(x, b.get(&format!("{pre}.{name}.gamma"))?, b.get(&format!("{pre}.{name}.beta"))?, LN_EPS)
        };
        let h = norm(t, "norm1")?;
        let attn = format!("{pre}.attn");
        let a = match cfg.attention {
            AttentionVariant::Aaa => all_axis_attention(tape, h, queries, &AAAParams::bind(b, &attn, heads)?, cfg.affinity)?,
            AttentionVariant::Spatial => spatial_attention(tape, h, &AAAParams::bind(b, &attn, heads)?, cfg.affinity)?,
            AttentionVariant::Channel => channel_attention_tokens(
                tape,
                h,
                &AAAParams::bind(b, &attn, heads)?,
                param_affinity(cfg.affinity, true),
            )?,
            AttentionVariant::Osa => omni_attention(
                tape,
                h,
                &AAAParams::bind(b, &format!("{attn}.spatial"), heads)?,
                &AAAParams::bind(b, &format!("{attn}.channel"), heads)?,
                cfg.affinity,
            )?,
        };
        let t = tape.add(t, a.out)?;
        let h = norm(t, "norm2")?;
        let f = ffn_forward(tape, h, &FfnParams::bind(b, &format!("{pre}.ffn"))?, &cfg.ffn_config(stage), g)?;
        tape.add(t, f)
    }

    /// Runs the network without recording gradients.
    pub fn restore(&self, image: &Tensor, label: &str) -> Result<Tensor> {
        let tape = Tape::no_grad();
        let b = self.params.bind(&tape);
        let out = self.forward(&tape, &b, tape.constant(image), label)?;
        Ok(tape.value(out))
    }

    /// Applies one prompt after another, feeding each output to the next call.
    pub fn restore_iterative<S: AsRef<str>>(&self, image: &Tensor, labels: &[S]) -> Result<Tensor> {
        if labels.is_empty() {
            return Err(Error::Usage("at least one prompt is required".into()));
        }
        let mut x = image.clone();
        for l in labels {
            x = self.restore(&x, l.as_ref())?;
        }
        Ok(x)
    }
}

impl RestorationModel for Restorer {
    fn restore(&self, degraded: &Tensor, label: &str) -> Result<Tensor> {
        Restorer::restore(self, degraded, label)
    }
}

fn shape3(tape: &Tape, v: Var) -> [usize; 3] {
    let s = tape.shape(v);
    [s[0], s[1], s[2]]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn count_matches_build_for_every_variant() {
        use crate::attention::ConnectMode;
        use crate::dcffn::FfnVariant;
        for attention in AttentionVariant::ALL {
            for affinity in Affinity::ALL {
                for ffn in FfnVariant::ALL {
                    let mut c = ModelConfig::toy();
                    c.attention = attention;
                    c.affinity = affinity;
                    c.ffn = ffn;
                    c.prompt = PromptMode::Learnable;
                    c.connect = ConnectMode::Off;
                    let m = Restorer::build(c.clone(), 1).unwrap();
                    assert_eq!(count_params(&c).unwrap(), m.params().numel());
                }
            }
        }
    }

    #[test]
    fn zero_layer_stage_only_adds_embed_and_revert() {
        let mut c = ModelConfig::toy();
        let base = count_params(&c).unwrap();
        c.stages[0].layers = 0;
        let fewer = count_params(&c).unwrap();
        let one_block = 4 * c.dim + AAAParams::param_count(c.dim, 2, Affinity::Negative) + c.ffn_config(0).param_count().unwrap();
        assert_eq!(base - fewer, TOY_LAYERS[0] * one_block);
        let m = Restorer::build(c, 0).unwrap();
        assert!(m.params().names().all(|n| !n.starts_with("stage1.block")));
        assert!(m.params().contains("stage1.embed.pos"));
    }

    #[test]
    fn untrained_network_is_identity() {
        let m = Restorer::build(ModelConfig::toy(), 3).unwrap();
        let x = Tensor::uniform([3, 64, 64], 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(m.restore(&x, "noise").unwrap().bit_eq(&x));
    }

    #[test]
    fn from_params_rejects_foreign_layout() {
        let toy = Restorer::build(ModelConfig::toy(), 0).unwrap();
        let mut other = ModelConfig::toy();
        other.ffn = crate::dcffn::FfnVariant::Vanilla;
        assert!(matches!(
            Restorer::from_params(other, toy.params().clone()),
            Err(Error::Incompatible(_))
        ));
    }
}
