//! All-axis attention and the baseline attention operators.
//!
//! All-axis attention (AAA) is multi-head cross-attention whose queries come
//! from the replicated prompt and whose keys and values come from stereo
//! tokens. With the default negative affinity the scores are negated before
//! the softmax, so the key most similar to the prompt gets the least weight.
//!
//! The spatial, channel and omni (spatial then channel) operators are
//! self-attention baselines that ignore the prompt.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::embedding::TokenGeometry;
use crate::error::{Error, Result};
use crate::params::{Bindings, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Which attention operator a block uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum AttentionVariant {
    #[default]
    Aaa,
    Spatial,
    Channel,
    Osa,
}

impl AttentionVariant {
    pub const ALL: [AttentionVariant; 4] = [Self::Spatial, Self::Channel, Self::Osa, Self::Aaa];

    pub fn name(self) -> &'static str {
        match self {
            Self::Aaa => "aaa",
            Self::Spatial => "spatial",
            Self::Channel => "channel",
            Self::Osa => "osa",
        }
    }

    /// Row label used in ablation tables.
    pub fn row_label(self) -> &'static str {
        match self {
            Self::Aaa => "w/ AAA",
            Self::Spatial => "w/ spatial attention",
            Self::Channel => "w/ channel attention",
            Self::Osa => "w/ OSA",
        }
    }
}

impl fmt::Display for AttentionVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AttentionVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_lowercase().as_str() {
            "aaa" | "all-axis" => Ok(Self::Aaa),
            "spatial" => Ok(Self::Spatial),
            "channel" => Ok(Self::Channel),
            "osa" | "omni" => Ok(Self::Osa),
            other => Err(Error::Config(format!("unknown attention variant {other:?}"))),
        }
    }
}

/// How the attention logits are formed from `q·kᵀ/√d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Affinity {
    /// `softmax(−q·kᵀ/√d)`
    #[default]
    Negative,
    /// `softmax(q·kᵀ/√d)`
    Vanilla,
    /// `softmax(M · (q·kᵀ/√d))`, a learned `H × H` mix across heads
    /// initialized to the identity.
    Projection,
}

impl Affinity {
    pub const ALL: [Affinity; 3] = [Self::Vanilla, Self::Projection, Self::Negative];

    pub fn name(self) -> &'static str {
        match self {
            Self::Negative => "negative",
            Self::Vanilla => "vanilla",
            Self::Projection => "projection",
        }
    }

    pub fn row_label(self) -> &'static str {
        match self {
            Self::Negative => "w/ negative affinity matrices",
            Self::Vanilla => "w/ vanilla affinity matrices",
            Self::Projection => "w/ projection affinity matrices",
        }
    }
}

impl fmt::Display for Affinity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Affinity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_lowercase().as_str() {
            "negative" => Ok(Self::Negative),
            "vanilla" => Ok(Self::Vanilla),
            "projection" => Ok(Self::Projection),
            other => Err(Error::Config(format!("unknown affinity {other:?}"))),
        }
    }
}

/// Whether each stage's AAA output feeds the next stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum ConnectMode {
    #[default]
    On,
    Off,
}

impl ConnectMode {
    pub fn row_label(self) -> &'static str {
        match self {
            Self::On => "w/ AAA connection",
            Self::Off => "w/o AAA connection",
        }
    }
}

/// Projection matrices of one multi-head attention operator.
#[derive(Debug, Clone, Copy)]
pub struct AAAParams {
    /// `[D, D]`
    pub w_q: Var,
    pub w_k: Var,
    pub w_v: Var,
    pub w_o: Var,
    /// `[H, H]` head mix; present for [`Affinity::Projection`].
    pub mix: Option<Var>,
    pub heads: usize,
}

impl AAAParams {
    pub fn bind(b: &Bindings, prefix: &str, heads: usize) -> Result<Self> {
        Ok(AAAParams {
            w_q: b.get(&format!("{prefix}.w_q"))?,
            w_k: b.get(&format!("{prefix}.w_k"))?,
            w_v: b.get(&format!("{prefix}.w_v"))?,
            w_o: b.get(&format!("{prefix}.w_o"))?,
            mix: b.get_opt(&format!("{prefix}.mix")),
            heads,
        })
    }

    /// Registers `[D, D]` projections (and the head mix when needed).
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        dim: usize,
        heads: usize,
        affinity: Affinity,
        rng: &mut R,
    ) -> Result<()> {
        head_dim(dim, heads)?;
        let std = (1.0 / dim as f64).sqrt();
        for m in ["w_q", "w_k", "w_v", "w_o"] {
            store.normal(&format!("{prefix}.{m}"), &[dim, dim], std, rng)?;
        }
        if affinity == Affinity::Projection {
            store.insert(format!("{prefix}.mix"), Tensor::eye(heads)?.with_requires_grad())?;
        }
        Ok(())
    }

    pub fn param_count(dim: usize, heads: usize, affinity: Affinity) -> usize {
        4 * dim * dim + if affinity == Affinity::Projection { heads * heads } else { 0 }
    }
}

/// Per-head width `D / H`.
pub fn head_dim(dim: usize, heads: usize) -> Result<usize> {
    if heads == 0 || dim % heads != 0 || dim / heads == 0 {
        return Err(Error::Config(format!("{heads} heads do not evenly split width {dim}")));
    }
    Ok(dim / heads)
}

/// Attention result plus the row-stochastic weights `[H, rows, cols]`.
#[derive(Debug, Clone, Copy)]
pub struct Attended {
    pub out: Var,
    pub weights: Var,
}

/// `[N, D]` → `[H, N, dh]`.
fn split_heads(tape: &Tape, x: Var, heads: usize) -> Result<Var> {
    let s = tape.shape(x);
    let (n, d) = (s[0], s[1]);
    let x = tape.reshape(x, &[n, heads, d / heads])?;
    tape.permute(x, &[1, 0, 2])
}

/// `[H, N, dh]` → `[N, D]`.
fn merge_heads(tape: &Tape, x: Var) -> Result<Var> {
    let s = tape.shape(x);
    let x = tape.permute(x, &[1, 0, 2])?;
    tape.reshape(x, &[s[1], s[0] * s[2]])
}

fn check_tokens(tape: &Tape, x: Var, dim: usize, op: &'static str) -> Result<usize> {
    match tape.shape(x)[..] {
        [n, d] if d == dim && n > 0 => Ok(n),
        ref s => Err(Error::shape(op, format!("expected [N, {dim}], got {s:?}"))),
    }
}

fn weight_dim(tape: &Tape, p: &AAAParams, op: &'static str) -> Result<usize> {
    let s = tape.shape(p.w_q);
    let [d, d2] = s[..] else {
        return Err(Error::shape(op, format!("projection must be [D, D], got {s:?}")));
    };
    for w in [p.w_k, p.w_v, p.w_o] {
        if tape.shape(w) != [d, d2] || d != d2 {
            return Err(Error::shape(op, "projections must all be [D, D]"));
        }
    }
    Ok(d)
}

/// Scaled multi-head attention of `q_src` over `kv_src`.
fn multi_head(tape: &Tape, q_src: Var, kv_src: Var, p: &AAAParams, affinity: Affinity, op: &'static str) -> Result<Attended> {
    let dim = weight_dim(tape, p, op)?;
    let dh = head_dim(dim, p.heads)?;
    let nq = check_tokens(tape, q_src, dim, op)?;
    let nk = check_tokens(tape, kv_src, dim, op)?;
    let q = split_heads(tape, tape.matmul(q_src, p.w_q)?, p.heads)?;
    let k = split_heads(tape, tape.matmul(kv_src, p.w_k)?, p.heads)?;
    let v = split_heads(tape, tape.matmul(kv_src, p.w_v)?, p.heads)?;
    let scale = 1.0 / (dh as f64).sqrt();
    let logits = tape.matmul_nt(q, k)?;
    let logits = match affinity {
        Affinity::Negative => tape.scale(logits, -scale)?,
        Affinity::Vanilla => tape.scale(logits, scale)?,
        Affinity::Projection => {
            let mix = p.mix.ok_or_else(|| Error::Config("projection affinity needs a head mix".into()))?;
            if tape.shape(mix) != [p.heads, p.heads] {
                return Err(Error::shape(op, format!("head mix must be [{0}, {0}]", p.heads)));
            }
            let flat = tape.reshape(tape.scale(logits, scale)?, &[p.heads, nq * nk])?;
            tape.reshape(tape.matmul(mix, flat)?, &[p.heads, nq, nk])?
        }
    };
    let weights = tape.softmax(logits)?;
    let o = merge_heads(tape, tape.matmul(weights, v)?)?;
    Ok(Attended {
        out: tape.matmul(o, p.w_o)?,
        weights,
    })
}

/// All-axis attention: queries from `prompt` `[N, D]`, keys and values from
/// `tokens` `[N, D]`.
pub fn all_axis_attention(tape: &Tape, tokens: Var, prompt: Var, p: &AAAParams, affinity: Affinity) -> Result<Attended> {
    let n = check_tokens(tape, tokens, tape.shape(tokens).get(1).copied().unwrap_or(0), "all_axis_attention")?;
    if tape.shape(prompt).first() != Some(&n) {
        return Err(Error::shape(
            "all_axis_attention",
            format!("prompt {:?} vs tokens {:?}", tape.shape(prompt), tape.shape(tokens)),
        ));
    }
    multi_head(tape, prompt, tokens, p, affinity, "all_axis_attention")
}

/// Multi-head self-attention over the token axis.
pub fn spatial_attention(tape: &Tape, tokens: Var, p: &AAAParams, affinity: Affinity) -> Result<Attended> {
    multi_head(tape, tokens, tokens, p, affinity, "spatial_attention")
}

/// Transposed attention across channels of `tokens` `[N, C]`: per head, a
/// `dc × dc` affinity over the channel axis scaled by `1/√N`.
pub fn channel_attention_tokens(tape: &Tape, tokens: Var, p: &AAAParams, affinity: Affinity) -> Result<Attended> {
    let op = "channel_attention";
    let dim = weight_dim(tape, p, op)?;
    head_dim(dim, p.heads)?;
    let n = check_tokens(tape, tokens, dim, op)?;
    // [N, C] → [H, dc, N]
    let heads_t = |x: Var| -> Result<Var> {
        let x = split_heads(tape, x, p.heads)?;
        tape.permute(x, &[0, 2, 1])
    };
    let q = heads_t(tape.matmul(tokens, p.w_q)?)?;
    let k = heads_t(tape.matmul(tokens, p.w_k)?)?;
    let v = heads_t(tape.matmul(tokens, p.w_v)?)?;
    let scale = 1.0 / (n as f64).sqrt();
    let logits = tape.matmul_nt(q, k)?;
    let logits = match affinity {
        Affinity::Negative => tape.scale(logits, -scale)?,
        _ => tape.scale(logits, scale)?,
    };
    let weights = tape.softmax(logits)?;
    let o = tape.matmul(weights, v)?; // [H, dc, N]
    let o = tape.permute(o, &[0, 2, 1])?;
    let o = merge_heads(tape, o)?;
    Ok(Attended {
        out: tape.matmul(o, p.w_o)?,
        weights,
    })
}

/// Channel attention on a channel-major `[C, HW]` feature matrix.
pub fn channel_attention(tape: &Tape, features: Var, p: &AAAParams, affinity: Affinity) -> Result<Attended> {
    let t = tape.transpose(features)?;
    let a = channel_attention_tokens(tape, t, p, affinity)?;
    Ok(Attended {
        out: tape.transpose(a.out)?,
        weights: a.weights,
    })
}

/// Spatial attention followed by channel attention, each with its own
/// projections. The returned weights are the channel stage's.
pub fn omni_attention(tape: &Tape, tokens: Var, spatial: &AAAParams, channel: &AAAParams, affinity: Affinity) -> Result<Attended> {
    let s = spatial_attention(tape, tokens, spatial, affinity)?;
    channel_attention_tokens(tape, s.out, channel, affinity)
}

/// Adds the previous stage's AAA output to the current tokens.
///
/// Equal token counts add directly. Otherwise the previous grid must be an
/// integer multiple of the current one along every axis, and each group of
/// previous tokens is averaged into one.
pub fn aaa_connect(
    tape: &Tape,
    prev: Option<(Var, &TokenGeometry)>,
    cur: Var,
    cur_geometry: &TokenGeometry,
    mode: ConnectMode,
) -> Result<Var> {
    let Some((prev, pg)) = prev else { return Ok(cur) };
    if mode == ConnectMode::Off {
        return Ok(cur);
    }
    let (ps, cs) = (tape.shape(prev), tape.shape(cur));
    if ps.len() != 2 || cs.len() != 2 || ps[1] != cs[1] {
        return Err(Error::shape("aaa_connect", format!("{ps:?} vs {cs:?}")));
    }
    if ps[0] == cs[0] {
        return tape.add(cur, prev);
    }
    let pool = pooling_matrix(pg, cur_geometry)?;
    let pooled = tape.matmul(tape.constant(&pool), prev)?;
    tape.add(cur, pooled)
}

/// `[N, N_prev]` averaging matrix mapping the previous token grid onto the
/// current one.
pub fn pooling_matrix(prev: &TokenGeometry, cur: &TokenGeometry) -> Result<Tensor> {
    let factor = |axis: &str, a: usize, b: usize| {
        if b > 0 && a >= b && a % b == 0 {
            Ok(a / b)
        } else {
            Err(Error::Config(format!(
                "cannot pool {axis} token axis from {a} to {b}: no integer factor"
            )))
        }
    };
    let fd = factor("channel", prev.n_d, cur.n_d)?;
    let fh = factor("height", prev.n_h, cur.n_h)?;
    let fw = factor("width", prev.n_w, cur.n_w)?;
    let (n, np) = (cur.count(), prev.count());
    let w = 1.0 / (fd * fh * fw) as f64;
    let mut m = vec![0.0; n * np];
    for cd in 0..prev.n_d {
        for ch in 0..prev.n_h {
            for cw in 0..prev.n_w {
                let src = (cd * prev.n_h + ch) * prev.n_w + cw;
                let dst = ((cd / fd) * cur.n_h + ch / fh) * cur.n_w + cw / fw;
                m[dst * np + src] = w;
            }
        }
    }
    Tensor::new([n, np], m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params(tape: &Tape, d: usize, heads: usize, affinity: Affinity, seed: u64) -> AAAParams {
        let mut s = ParamStore::new();
        AAAParams::init(&mut s, "a", d, heads, affinity, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        AAAParams::bind(&s.bind(tape), "a", heads).unwrap()
    }

    #[test]
    fn hand_evaluated_unit_head() {
        // Two heads of width 1; head 0 sees q = 2, k = [3, 0], v = [1, 5].
        let tape = Tape::no_grad();
        let m = |v: [f64; 4]| tape.constant(&Tensor::new([2, 2], v.to_vec()).unwrap());
        let p = AAAParams {
            w_q: m([1.0, 0.0, 0.0, 1.0]),
            w_k: m([1.0, 0.0, 0.0, 0.0]),
            w_v: m([0.0, 0.0, 1.0, 0.0]),
            w_o: m([1.0, 0.0, 0.0, 1.0]),
            mix: None,
            heads: 2,
        };
        let tokens = m([3.0, 1.0, 0.0, 5.0]);
        let prompt = m([2.0, 0.0, 2.0, 0.0]);
        let a = all_axis_attention(&tape, tokens, prompt, &p, Affinity::Negative).unwrap();
        let w = tape.value(a.weights);
        assert!((w.data()[0] - 0.002473).abs() < 1e-6 && (w.data()[1] - 0.997527).abs() < 1e-6);
        let out = tape.value(a.out);
        let e = (-6.0f64).exp();
        let want = (e * 1.0 + 5.0) / (1.0 + e);
        assert!((out.data()[0] - want).abs() < 1e-12, "{:?}", out.data());
        assert!((out.data()[0] - 4.99012).abs() < 5e-5);
    }

    #[test]
    fn head_count_must_divide_width() {
        assert!(matches!(head_dim(8, 3), Err(Error::Config(_))));
        assert!(matches!(head_dim(8, 0), Err(Error::Config(_))));
        assert_eq!(head_dim(512, 8).unwrap(), 64);
    }

    #[test]
    fn zero_query_gives_uniform_weights() {
        let tape = Tape::no_grad();
        let mut p = params(&tape, 4, 2, Affinity::Negative, 1);
        p.w_q = tape.constant(&Tensor::zeros([4, 4]).unwrap());
        let x = tape.constant(&Tensor::randn([5, 4], 1.0, &mut ChaCha8Rng::seed_from_u64(2)).unwrap());
        let a = all_axis_attention(&tape, x, x, &p, Affinity::Negative).unwrap();
        assert!(tape.value(a.weights).data().iter().all(|&w| (w - 0.2).abs() < 1e-15));
    }

    #[test]
    fn single_token_spatial_is_value_projection() {
        let tape = Tape::no_grad();
        let p = params(&tape, 4, 2, Affinity::Vanilla, 3);
        let x = tape.constant(&Tensor::randn([1, 4], 1.0, &mut ChaCha8Rng::seed_from_u64(4)).unwrap());
        let a = spatial_attention(&tape, x, &p, Affinity::Vanilla).unwrap();
        let want = tape.matmul(tape.matmul(x, p.w_v).unwrap(), p.w_o).unwrap();
        assert!(tape.value(a.out).max_abs_diff(&tape.value(want)).unwrap() < 1e-14);
    }

    #[test]
    fn channel_attention_preserves_shape() {
        let tape = Tape::no_grad();
        let p = params(&tape, 6, 3, Affinity::Vanilla, 5);
        let f = tape.constant(&Tensor::randn([6, 10], 1.0, &mut ChaCha8Rng::seed_from_u64(6)).unwrap());
        let a = channel_attention(&tape, f, &p, Affinity::Vanilla).unwrap();
        assert_eq!(tape.shape(a.out), vec![6, 10]);
        assert_eq!(tape.shape(a.weights), vec![3, 2, 2]);
    }

    #[test]
    fn connect_rules() {
        let tape = Tape::no_grad();
        let g = TokenGeometry::new(4, 4, 4, 2, 2).unwrap();
        let cur = tape.constant(&Tensor::randn([8, 3], 1.0, &mut ChaCha8Rng::seed_from_u64(7)).unwrap());
        let prev = tape.constant(&Tensor::ones([8, 3]).unwrap());
        let off = aaa_connect(&tape, Some((prev, &g)), cur, &g, ConnectMode::Off).unwrap();
        assert_eq!(off, cur);
        let on = aaa_connect(&tape, Some((prev, &g)), cur, &g, ConnectMode::On).unwrap();
        let diff: Vec<f64> = tape.value(on).data().iter().zip(tape.value(cur).data()).map(|(a, b)| a - b).collect();
        assert!(diff.iter().all(|&d| (d - 1.0).abs() < 1e-15));
        let zero = tape.constant(&Tensor::zeros([8, 3]).unwrap());
        let z = aaa_connect(&tape, Some((zero, &g)), cur, &g, ConnectMode::On).unwrap();
        assert!(tape.value(z).bit_eq(&tape.value(cur)));
    }

    #[test]
    fn pooling_averages_token_groups() {
        let prev = TokenGeometry::new(4, 8, 8, 2, 2).unwrap(); // 2 x 4 x 4 grid
        let cur = TokenGeometry::new(2, 4, 4, 2, 2).unwrap(); // 1 x 2 x 2 grid
        let m = pooling_matrix(&prev, &cur).unwrap();
        assert_eq!(m.shape(), &[4, 32]);
        for row in m.data().chunks(32) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-15);
            assert_eq!(row.iter().filter(|&&v| v > 0.0).count(), 8);
        }
        let bad = TokenGeometry::new(6, 6, 6, 2, 2).unwrap();
        assert!(matches!(pooling_matrix(&bad, &cur), Err(Error::Config(_))));
    }
}
