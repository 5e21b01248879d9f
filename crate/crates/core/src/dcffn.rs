//! Feed-forward networks for the attention blocks.
//!
//! The 3-D depthwise convolutional FFN expands each token to a hidden
//! `p × p × d_h` volume, filters it with a 3×3×3 kernel shared by all
//! tokens, and contracts back to `D`. The 2-D and gated variants filter the
//! hidden features over the token grid instead.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::embedding::TokenGeometry;
use crate::error::{Error, Result};
use crate::ops::ConvOptions;
use crate::params::{Bindings, ParamStore};
use crate::tape::{Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum FfnVariant {
    Vanilla,
    Dcffn2d,
    Gdfn,
    #[default]
    Dcffn3d,
}

impl FfnVariant {
    pub const ALL: [FfnVariant; 4] = [Self::Vanilla, Self::Dcffn2d, Self::Gdfn, Self::Dcffn3d];

    pub fn name(self) -> &'static str {
        match self {
            Self::Vanilla => "vanilla",
            Self::Dcffn2d => "dcffn2d",
            Self::Gdfn => "gdfn",
            Self::Dcffn3d => "dcffn3d",
        }
    }

    pub fn row_label(self) -> &'static str {
        match self {
            Self::Vanilla => "w/ vanilla FFN",
            Self::Dcffn2d => "w/ DCFFN",
            Self::Gdfn => "w/ GDFN",
            Self::Dcffn3d => "w/ 3D-DCFFN",
        }
    }
}

impl fmt::Display for FfnVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FfnVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_lowercase().as_str() {
            "vanilla" => Ok(Self::Vanilla),
            "dcffn2d" | "dcffn" => Ok(Self::Dcffn2d),
            "gdfn" => Ok(Self::Gdfn),
            "dcffn3d" | "3d-dcffn" => Ok(Self::Dcffn3d),
            other => Err(Error::Config(format!("unknown FFN variant {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Gelu,
    Identity,
}

impl Activation {
    fn apply(self, tape: &Tape, x: Var) -> Result<Var> {
        match self {
            Activation::Gelu => tape.gelu(x),
            Activation::Identity => Ok(x),
        }
    }
}

/// Shape parameters of one FFN.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FfnConfig {
    pub variant: FfnVariant,
    pub dim: usize,
    /// Token side and depth of the stage the FFN sits in.
    pub p: usize,
    pub d: usize,
    pub expansion: f64,
    pub activation: Activation,
}

impl FfnConfig {
    pub fn new(variant: FfnVariant, dim: usize, p: usize, d: usize) -> Self {
        FfnConfig {
            variant,
            dim,
            p,
            d,
            expansion: 2.0,
            activation: Activation::Gelu,
        }
    }

    fn scaled(&self, base: usize, what: &str) -> Result<usize> {
        let v = self.expansion * base as f64;
        if !(v >= 1.0 && (v - v.round()).abs() < 1e-9) {
            return Err(Error::Config(format!(
                "expansion {} times {what} {base} is not a positive integer",
                self.expansion
            )));
        }
        Ok(v.round() as usize)
    }

    /// Hidden token depth of the 3-D variant.
    pub fn hidden_depth(&self) -> Result<usize> {
        self.scaled(self.d, "token depth")
    }

    /// Width of the hidden layer.
    pub fn hidden(&self) -> Result<usize> {
        match self.variant {
            FfnVariant::Dcffn3d => Ok(self.p * self.p * self.hidden_depth()?),
            _ => self.scaled(self.dim, "width"),
        }
    }

    pub fn param_count(&self) -> Result<usize> {
        let (d, h) = (self.dim, self.hidden()?);
        let linears = d * h + h + h * d + d;
        Ok(match self.variant {
            FfnVariant::Vanilla => linears,
            FfnVariant::Dcffn2d => linears + h * 9 + h,
            FfnVariant::Gdfn => linears + d * h + h + 2 * (h * 9 + h),
            FfnVariant::Dcffn3d => linears + 27 + 1,
        })
    }

    /// Multiply-accumulates for `n` tokens.
    pub fn macs(&self, n: usize) -> Result<usize> {
        let (d, h) = (self.dim, self.hidden()?);
        let linears = n * d * h * 2;
        Ok(match self.variant {
            FfnVariant::Vanilla => linears,
            FfnVariant::Dcffn2d => linears + n * h * 9,
            FfnVariant::Gdfn => linears + n * d * h + 2 * n * h * 9 + n * h,
            FfnVariant::Dcffn3d => linears + n * h * 27,
        })
    }
}

/// Parameter handles of one FFN. Unused slots are `None` for a variant.
#[derive(Debug, Clone, Copy)]
pub struct FfnParams {
    pub w_in: Var,
    pub b_in: Var,
    pub w_gate: Option<Var>,
    pub b_gate: Option<Var>,
    pub conv_w: Option<Var>,
    pub conv_b: Option<Var>,
    pub gate_conv_w: Option<Var>,
    pub gate_conv_b: Option<Var>,
    pub w_out: Var,
    pub b_out: Var,
}

impl FfnParams {
    pub fn bind(b: &Bindings, prefix: &str) -> Result<Self> {
        let opt = |n: &str| b.get_opt(&format!("{prefix}.{n}"));
        Ok(FfnParams {
            w_in: b.get(&format!("{prefix}.w_in"))?,
            b_in: b.get(&format!("{prefix}.b_in"))?,
            w_gate: opt("w_gate"),
            b_gate: opt("b_gate"),
            conv_w: opt("conv.weight"),
            conv_b: opt("conv.bias"),
            gate_conv_w: opt("gate_conv.weight"),
            gate_conv_b: opt("gate_conv.bias"),
            w_out: b.get(&format!("{prefix}.w_out"))?,
            b_out: b.get(&format!("{prefix}.b_out"))?,
        })
    }

    pub fn init<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, cfg: &FfnConfig, rng: &mut R) -> Result<()> {
        let (d, h) = (cfg.dim, cfg.hidden()?);
        let n = |s: &str| format!("{prefix}.{s}");
        store.normal(&n("w_in"), &[d, h], (1.0 / d as f64).sqrt(), rng)?;
        store.constant(&n("b_in"), &[h], 0.0)?;
        if cfg.variant == FfnVariant::Gdfn {
            store.normal(&n("w_gate"), &[d, h], (1.0 / d as f64).sqrt(), rng)?;
            store.constant(&n("b_gate"), &[h], 0.0)?;
        }
        match cfg.variant {
            FfnVariant::Vanilla => {}
            FfnVariant::Dcffn2d | FfnVariant::Gdfn => {
                store.normal(&n("conv.weight"), &[h, 1, 3, 3], 1.0 / 3.0, rng)?;
                store.constant(&n("conv.bias"), &[h], 0.0)?;
                if cfg.variant == FfnVariant::Gdfn {
                    store.normal(&n("gate_conv.weight"), &[h, 1, 3, 3], 1.0 / 3.0, rng)?;
                    store.constant(&n("gate_conv.bias"), &[h], 0.0)?;
                }
            }
            FfnVariant::Dcffn3d => {
                store.normal(&n("conv.weight"), &[1, 1, 3, 3, 3], (1.0 / 27.0f64).sqrt(), rng)?;
                store.constant(&n("conv.bias"), &[1], 0.0)?;
            }
        }
        store.normal(&n("w_out"), &[h, d], (1.0 / h as f64).sqrt(), rng)?;
        store.constant(&n("b_out"), &[d], 0.0)
    }
}

fn need(v: Option<Var>, what: &str) -> Result<Var> {
    v.ok_or_else(|| Error::Config(format!("FFN variant needs parameter {what}")))
}

/// The 3-D depthwise convolutional FFN on `[N, D]` tokens.
pub fn dcffn_forward(tape: &Tape, tokens: Var, p: &FfnParams, cfg: &FfnConfig, geometry: &TokenGeometry) -> Result<Var> {
    if geometry.p != cfg.p || geometry.d != cfg.d {
        return Err(Error::Config(format!(
            "FFN built for p={}, d={} but tokens use p={}, d={}",
            cfg.p, cfg.d, geometry.p, geometry.d
        )));
    }
    let n = tape.shape(tokens)[0];
    let dh = cfg.hidden_depth()?;
    let hidden = cfg.hidden()?;
    if tape.shape(p.w_in) != [cfg.dim, hidden] {
        return Err(Error::Config(format!(
            "hidden width {:?} does not factor as {}x{}x{dh}",
            tape.shape(p.w_in),
            cfg.p,
            cfg.p
        )));
    }
    let h = cfg.activation.apply(tape, tape.linear(tokens, p.w_in, Some(p.b_in))?)?;
    let h = tape.reshape(h, &[n, 1, dh, cfg.p, cfg.p])?;
    let h = tape.conv3d(h, need(p.conv_w, "conv.weight")?, p.conv_b, ConvOptions::new(1, 1))?;
    let h = cfg.activation.apply(tape, h)?;
    let h = tape.reshape(h, &[n, hidden])?;
    tape.linear(h, p.w_out, Some(p.b_out))
}

/// `[N, H]` hidden features → `[n_d, H, n_h, n_w]` maps over the token grid.
fn to_grid(tape: &Tape, h: Var, g: &TokenGeometry) -> Result<Var> {
    let hidden = tape.shape(h)[1];
    let x = tape.reshape(h, &[g.n_d, g.n_h * g.n_w, hidden])?;
    let x = tape.permute(x, &[0, 2, 1])?;
    tape.reshape(x, &[g.n_d, hidden, g.n_h, g.n_w])
}

fn from_grid(tape: &Tape, x: Var, g: &TokenGeometry) -> Result<Var> {
    let hidden = tape.shape(x)[1];
    let x = tape.reshape(x, &[g.n_d, hidden, g.n_h * g.n_w])?;
    let x = tape.permute(x, &[0, 2, 1])?;
    tape.reshape(x, &[g.count(), hidden])
}

fn depthwise_grid(tape: &Tape, h: Var, w: Var, b: Option<Var>, g: &TokenGeometry) -> Result<Var> {
    let hidden = tape.shape(h)[1];
    let x = to_grid(tape, h, g)?;
    let x = tape.conv2d(x, w, b, ConvOptions::new(1, 1).groups(hidden))?;
    from_grid(tape, x, g)
}

/// Runs the configured FFN variant on `[N, D]` tokens; output is `[N, D]`.
pub fn ffn_forward(tape: &Tape, tokens: Var, p: &FfnParams, cfg: &FfnConfig, geometry: &TokenGeometry) -> Result<Var> {
    let s = tape.shape(tokens);
    if s.len() != 2 || s[1] != cfg.dim || s[0] != geometry.count() {
        return Err(Error::shape(
            "ffn",
            format!("tokens {s:?} vs width {} and {} tokens", cfg.dim, geometry.count()),
        ));
    }
    let act = cfg.activation;
    match cfg.variant {
        FfnVariant::Dcffn3d => dcffn_forward(tape, tokens, p, cfg, geometry),
        FfnVariant::Vanilla => {
            let h = act.apply(tape, tape.linear(tokens, p.w_in, Some(p.b_in))?)?;
            tape.linear(h, p.w_out, Some(p.b_out))
        }
        FfnVariant::Dcffn2d => {
            let h = act.apply(tape, tape.linear(tokens, p.w_in, Some(p.b_in))?)?;
            let h = depthwise_grid(tape, h, need(p.conv_w, "conv.weight")?, p.conv_b, geometry)?;
            let h = act.apply(tape, h)?;
            tape.linear(h, p.w_out, Some(p.b_out))
        }
        FfnVariant::Gdfn => {
            let a = tape.linear(tokens, p.w_in, Some(p.b_in))?;
            let a = depthwise_grid(tape, a, need(p.conv_w, "conv.weight")?, p.conv_b, geometry)?;
            let b = tape.linear(tokens, need(p.w_gate, "w_gate")?, p.b_gate)?;
            let b = depthwise_grid(tape, b, need(p.gate_conv_w, "gate_conv.weight")?, p.gate_conv_b, geometry)?;
            let h = tape.mul(act.apply(tape, a)?, b)?;
            tape.linear(h, p.w_out, Some(p.b_out))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn hidden_widths() {
        let c = FfnConfig::new(FfnVariant::Dcffn3d, 512, 16, 16);
        assert_eq!(c.hidden().unwrap(), 16 * 16 * 32);
        let c = FfnConfig::new(FfnVariant::Vanilla, 64, 2, 4);
        assert_eq!(c.hidden().unwrap(), 128);
        let mut c = FfnConfig::new(FfnVariant::Dcffn3d, 8, 2, 3);
        c.expansion = 1.5;
        assert!(matches!(c.hidden(), Err(Error::Config(_))));
    }

    #[test]
    fn unknown_variant_is_config_error() {
        assert!(matches!("swiglu".parse::<FfnVariant>(), Err(Error::Config(_))));
        assert_eq!("3d-dcffn".parse::<FfnVariant>().unwrap(), FfnVariant::Dcffn3d);
    }

    #[test]
    fn param_count_matches_init() {
        for v in FfnVariant::ALL {
            let cfg = FfnConfig::new(v, 8, 2, 2);
            let mut s = ParamStore::new();
            FfnParams::init(&mut s, "f", &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
            assert_eq!(s.numel(), cfg.param_count().unwrap(), "{v}");
        }
    }

    #[test]
    fn geometry_mismatch_is_config_error() {
        let cfg = FfnConfig::new(FfnVariant::Dcffn3d, 8, 2, 2);
        let mut s = ParamStore::new();
        FfnParams::init(&mut s, "f", &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let tape = Tape::no_grad();
        let p = FfnParams::bind(&s.bind(&tape), "f").unwrap();
        let g = TokenGeometry::new(4, 8, 8, 4, 4).unwrap();
        let x = tape.constant(&Tensor::zeros([g.count(), 8]).unwrap());
        assert!(matches!(dcffn_forward(&tape, x, &p, &cfg, &g), Err(Error::Config(_))));
    }
}
