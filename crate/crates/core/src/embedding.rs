//! Stereo token embedding and patch reversion.
//!
//! A `c × h × w` feature map is cut into `p × p × d` sub-volumes ("stereo
//! tokens") that span both space and channels. Tokens are ordered
//! channel-block-major: token `(cb, rb, kb)` sits at index
//! `(cb · n_h + rb) · n_w + kb`, and the values inside a token are laid out
//! as `[d, p, p]` so the channel block doubles as the depth axis of a 3-D
//! convolution.
//!
//! Embedding runs partition → per-token 3-D conv → flatten to `p²d` →
//! linear to `D` → layer norm → add learned positions. Reversion runs a
//! linear `D → p²d` and the inverse rearrangement.

use rand::Rng;

use crate::error::{Error, Result};
use crate::ops::ConvOptions;
use crate::params::{Bindings, ParamStore};
use crate::tape::{Tape, Var};

pub(crate) const LN_EPS: f64 = 1e-6;

/// Parameters of one stage's stereo embedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StereoEmbedConfig {
    /// Token spatial side in pixels.
    pub p: usize,
    /// Token channel depth.
    pub d: usize,
    /// Embedding width `D`.
    pub dim: usize,
    /// Cubic kernel side of the per-token 3-D convolution (odd).
    pub conv_kernel: usize,
    /// 1-based stage number, for naming only.
    pub stage_index: usize,
}

impl StereoEmbedConfig {
    pub fn new(p: usize, d: usize, dim: usize) -> Result<Self> {
        if p == 0 || d == 0 || dim == 0 {
            return Err(Error::Config(format!(
                "stereo embedding needs p, d, D >= 1 (got p={p}, d={d}, D={dim})"
            )));
        }
        Ok(StereoEmbedConfig {
            p,
            d,
            dim,
            conv_kernel: 3,
            stage_index: 1,
        })
    }

    pub fn token_volume(&self) -> usize {
        self.p * self.p * self.d
    }

    pub fn geometry(&self, channels: usize, height: usize, width: usize) -> Result<TokenGeometry> {
        TokenGeometry::new(channels, height, width, self.p, self.d)
    }
}

/// Grid layout of a stereo token sequence; enough to undo the partition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TokenGeometry {
    pub p: usize,
    pub d: usize,
    pub n_d: usize,
    pub n_h: usize,
    pub n_w: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl TokenGeometry {
    pub fn new(channels: usize, height: usize, width: usize, p: usize, d: usize) -> Result<Self> {
        if p == 0 || d == 0 {
            return Err(Error::Config("token extents must be positive".into()));
        }
        let check = |axis: &'static str, extent: usize, block: usize| {
            if extent == 0 || extent % block != 0 {
                Err(Error::Partition { axis, extent, block })
            } else {
                Ok(extent / block)
            }
        };
        Ok(TokenGeometry {
            p,
            d,
            n_h: check("height", height, p)?,
            n_w: check("width", width, p)?,
            n_d: check("channel", channels, d)?,
            channels,
            height,
            width,
        })
    }

    /// Number of tokens `N = hwc / p²d`.
    pub fn count(&self) -> usize {
        self.n_d * self.n_h * self.n_w
    }

    /// Elements per token, `p²d`.
    pub fn volume(&self) -> usize {
        self.p * self.p * self.d
    }
}

/// Embedded tokens plus the geometry needed to revert them.
#[derive(Debug, Clone, Copy)]
pub struct StereoTokenSequence {
    /// `[N, D]`.
    pub tokens: Var,
    pub geometry: TokenGeometry,
}

/// Splits a `[c, h, w]` map into `[N, d, p, p]` stereo tokens.
pub fn partition(tape: &Tape, feature: Var, p: usize, d: usize) -> Result<(Var, TokenGeometry)> {
    let shape = tape.shape(feature);
    let [c, h, w] = shape[..] else {
        return Err(Error::shape("partition", format!("expected [c, h, w], got {shape:?}")));
    };
    let g = TokenGeometry::new(c, h, w, p, d)?;
    let x = tape.reshape(feature, &[g.n_d, d, g.n_h, p, g.n_w, p])?;
    let x = tape.permute(x, &[0, 2, 4, 1, 3, 5])?;
    let x = tape.reshape(x, &[g.count(), d, p, p])?;
    Ok((x, g))
}

/// Inverse of [`partition`]; accepts `[N, d, p, p]` or `[N, p²d]`.
pub fn unpartition(tape: &Tape, tokens: Var, g: &TokenGeometry) -> Result<Var> {
    let n: usize = tape.shape(tokens).iter().product();
    if n != g.count() * g.volume() {
        return Err(Error::shape(
            "unpartition",
            format!("{:?} does not match geometry {g:?}", tape.shape(tokens)),
        ));
    }
    let x = tape.reshape(tokens, &[g.n_d, g.n_h, g.n_w, g.d, g.p, g.p])?;
    let x = tape.permute(x, &[0, 3, 1, 4, 2, 5])?;
    tape.reshape(x, &[g.channels, g.height, g.width])
}

/// Parameter handles for [`stereo_embed`].
#[derive(Debug, Clone, Copy)]
pub struct EmbedWeights {
    /// `[1, 1, k, k, k]`
    pub conv_w: Var,
    /// `[1]`
    pub conv_b: Var,
    /// `[p²d, D]`
    pub proj_w: Var,
    /// `[D]`
    pub proj_b: Var,
    pub ln_gamma: Var,
    pub ln_beta: Var,
    /// `[N, D]`
    pub pos: Var,
}

impl EmbedWeights {
    pub fn bind(b: &Bindings, prefix: &str) -> Result<Self> {
        Ok(EmbedWeights {
            conv_w: b.get(&format!("{prefix}.conv.weight"))?,
            conv_b: b.get(&format!("{prefix}.conv.bias"))?,
            proj_w: b.get(&format!("{prefix}.proj.weight"))?,
            proj_b: b.get(&format!("{prefix}.proj.bias"))?,
            ln_gamma: b.get(&format!("{prefix}.norm.gamma"))?,
            ln_beta: b.get(&format!("{prefix}.norm.beta"))?,
            pos: b.get(&format!("{prefix}.pos"))?,
        })
    }

    /// Registers freshly initialized embedding parameters under `prefix`.
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        cfg: &StereoEmbedConfig,
        tokens: usize,
        rng: &mut R,
    ) -> Result<()> {
        let k = cfg.conv_kernel;
        store.normal(&format!("{prefix}.conv.weight"), &[1, 1, k, k, k], (1.0 / (k * k * k) as f64).sqrt(), rng)?;
        store.constant(&format!("{prefix}.conv.bias"), &[1], 0.0)?;
        let vol = cfg.token_volume();
        store.normal(&format!("{prefix}.proj.weight"), &[vol, cfg.dim], (1.0 / vol as f64).sqrt(), rng)?;
        store.constant(&format!("{prefix}.proj.bias"), &[cfg.dim], 0.0)?;
        store.constant(&format!("{prefix}.norm.gamma"), &[cfg.dim], 1.0)?;
        store.constant(&format!("{prefix}.norm.beta"), &[cfg.dim], 0.0)?;
        store.normal(&format!("{prefix}.pos"), &[tokens, cfg.dim], 0.02, rng)?;
        Ok(())
    }

    pub fn param_count(cfg: &StereoEmbedConfig, tokens: usize) -> usize {
        let k3 = cfg.conv_kernel.pow(3);
        k3 + 1 + cfg.token_volume() * cfg.dim + cfg.dim + 2 * cfg.dim + tokens * cfg.dim
    }
}

/// Embeds a `[c, h, w]` feature map into `[N, D]` stereo tokens.
pub fn stereo_embed(tape: &Tape, feature: Var, cfg: &StereoEmbedConfig, w: &EmbedWeights) -> Result<StereoTokenSequence> {
    let (tokens, g) = partition(tape, feature, cfg.p, cfg.d)?;
    let (n, vol) = (g.count(), g.volume());
    let k = cfg.conv_kernel;
    expect_shape(tape, w.conv_w, &[1, 1, k, k, k], "embedding conv weight")?;
    expect_shape(tape, w.proj_w, &[vol, cfg.dim], "embedding projection")?;
    expect_shape(tape, w.pos, &[n, cfg.dim], "position embedding")?;

    let x = tape.reshape(tokens, &[n, 1, cfg.d, cfg.p, cfg.p])?;
    let x = tape.conv3d(x, w.conv_w, Some(w.conv_b), ConvOptions::new(1, k / 2))?;
    let x = tape.reshape(x, &[n, vol])?;
    let x = tape.linear(x, w.proj_w, Some(w.proj_b))?;
    let x = tape.layer_norm(x, w.ln_gamma, w.ln_beta, LN_EPS)?;
    let x = tape.add(x, w.pos)?;
    Ok(StereoTokenSequence { tokens: x, geometry: g })
}

/// Parameter handles for [`patch_revert`].
#[derive(Debug, Clone, Copy)]
pub struct RevertWeights {
    /// `[D, p²d]`
    pub proj_w: Var,
    /// `[p²d]`
    pub proj_b: Var,
}

impl RevertWeights {
    pub fn bind(b: &Bindings, prefix: &str) -> Result<Self> {
        Ok(RevertWeights {
            proj_w: b.get(&format!("{prefix}.proj.weight"))?,
            proj_b: b.get(&format!("{prefix}.proj.bias"))?,
        })
    }

    pub fn init<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, cfg: &StereoEmbedConfig, rng: &mut R) -> Result<()> {
        let vol = cfg.token_volume();
        store.normal(&format!("{prefix}.proj.weight"), &[cfg.dim, vol], (1.0 / cfg.dim as f64).sqrt(), rng)?;
        store.constant(&format!("{prefix}.proj.bias"), &[vol], 0.0)
    }

    pub fn param_count(cfg: &StereoEmbedConfig) -> usize {
        cfg.dim * cfg.token_volume() + cfg.token_volume()
    }
}

/// Projects `[N, D]` tokens back to `p²d` and reassembles the `[c, h, w]` map.
pub fn patch_revert(tape: &Tape, seq: &StereoTokenSequence, out_channels: usize, w: &RevertWeights) -> Result<Var> {
    let g = &seq.geometry;
    if out_channels != g.channels {
        return Err(Error::Usage(format!(
            "patch reversion to {out_channels} channels, but tokens were cut from {} channels",
            g.channels
        )));
    }
    let dim = *tape.shape(seq.tokens).last().expect("non-empty");
    expect_shape(tape, w.proj_w, &[dim, g.volume()], "reversion projection")?;
    let x = tape.linear(seq.tokens, w.proj_w, Some(w.proj_b))?;
    unpartition(tape, x, g)
}

pub(crate) fn expect_shape(tape: &Tape, v: Var, want: &[usize], what: &str) -> Result<()> {
    let got = tape.shape(v);
    if got != want {
        return Err(Error::Config(format!("{what} must be {want:?}, got {got:?}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{check_gradients, random_projection, GradCheck};
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    #[test]
    fn partition_counts_tokens() {
        let tape = Tape::no_grad();
        let x = tape.constant(&Tensor::zeros([4, 8, 8]).unwrap());
        let (t, g) = partition(&tape, x, 2, 2).unwrap();
        assert_eq!(g.count(), 32);
        assert_eq!(tape.shape(t), vec![32, 2, 2, 2]);
    }

    #[test]
    fn whole_map_is_one_token() {
        let tape = Tape::no_grad();
        let x = Tensor::randn([3, 4, 4], 1.0, &mut rng()).unwrap();
        let (t, g) = partition(&tape, tape.constant(&x), 4, 3).unwrap();
        assert_eq!(g.count(), 1);
        assert_eq!(tape.value(t).data(), x.data());
    }

    #[test]
    fn indivisible_height_names_axis() {
        let tape = Tape::no_grad();
        let x = tape.constant(&Tensor::zeros([2, 5, 4]).unwrap());
        match partition(&tape, x, 2, 2) {
            Err(Error::Partition { axis, extent: 5, block: 2 }) => assert_eq!(axis, "height"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn token_order_is_channel_block_major() {
        // c=4, h=w=4, p=2, d=2: token 1 is (cb=0, rb=0, kb=1), token 4 is (cb=1, 0, 0).
        let data: Vec<f64> = (0..64).map(f64::from).collect();
        let x = Tensor::new([4, 4, 4], data).unwrap();
        let tape = Tape::no_grad();
        let (t, _) = partition(&tape, tape.constant(&x), 2, 2).unwrap();
        let v = tape.value(t);
        // token 1, element (dd=0, y=0, x=0) = x[0][0][2]
        assert_eq!(v.data()[8], 2.0);
        // token 4, element (dd=1, y=1, x=1) = x[3][1][1] = 48 + 4 + 1
        assert_eq!(v.data()[4 * 8 + 7], 53.0);
    }

    #[test]
    fn revert_inverts_partition_exactly() {
        let x = Tensor::randn([4, 8, 8], 1.0, &mut rng()).unwrap();
        let tape = Tape::no_grad();
        let (t, g) = partition(&tape, tape.constant(&x), 2, 2).unwrap();
        let back = unpartition(&tape, t, &g).unwrap();
        assert!(tape.value(back).bit_eq(&x));
    }

    #[test]
    fn stage_preset_token_counts() {
        let g = TokenGeometry::new(128, 128, 128, 8, 16).unwrap();
        assert_eq!(g.count(), 2048);
        let g = TokenGeometry::new(128, 128, 128, 16, 16).unwrap();
        assert_eq!(g.count(), 512);
        let g = TokenGeometry::new(512, 16, 16, 4, 16).unwrap();
        assert_eq!(g.count(), 512);
        assert_eq!(g.volume(), 4 * 4 * 16);
    }

    #[test]
    fn all_zero_tokens_revert_to_zero_map() {
        let cfg = StereoEmbedConfig::new(2, 2, 6).unwrap();
        let mut store = ParamStore::new();
        RevertWeights::init(&mut store, "r", &cfg, &mut rng()).unwrap();
        store.get_mut("r.proj.weight").unwrap().data_mut().iter_mut().for_each(|v| *v = 0.5);
        let tape = Tape::no_grad();
        let b = store.bind(&tape);
        let w = RevertWeights::bind(&b, "r").unwrap();
        let g = TokenGeometry::new(4, 4, 4, 2, 2).unwrap();
        let tokens = tape.constant(&Tensor::zeros([g.count(), 6]).unwrap());
        let out = patch_revert(&tape, &StereoTokenSequence { tokens, geometry: g }, 4, &w).unwrap();
        assert_eq!(tape.shape(out), vec![4, 4, 4]);
        assert!(tape.value(out).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn stage4_reversion_shape() {
        let cfg = StereoEmbedConfig::new(4, 16, 8).unwrap();
        let mut store = ParamStore::new();
        RevertWeights::init(&mut store, "r", &cfg, &mut rng()).unwrap();
        let tape = Tape::no_grad();
        let w = RevertWeights::bind(&store.bind(&tape), "r").unwrap();
        let g = TokenGeometry::new(512, 16, 16, 4, 16).unwrap();
        let tokens = tape.constant(&Tensor::zeros([g.count(), 8]).unwrap());
        let out = patch_revert(&tape, &StereoTokenSequence { tokens, geometry: g }, 512, &w).unwrap();
        assert_eq!(g.count(), 512);
        assert_eq!(tape.shape(out), vec![512, 16, 16]);
    }

    /// Independent oracle: index arithmetic straight from the documented
    /// token layout, followed by a hand-rolled normalization.
    fn normalized_patches_oracle(x: &Tensor, p: usize, d: usize, dim: usize) -> Vec<f64> {
        let [c, h, w] = x.shape()[..] else { unreachable!() };
        let (n_d, n_h, n_w) = (c / d, h / p, w / p);
        let mut out = Vec::new();
        for cb in 0..n_d {
            for rb in 0..n_h {
                for kb in 0..n_w {
                    let mut tok = vec![0.0; dim];
                    let mut i = 0;
                    for dd in 0..d {
                        for y in 0..p {
                            for xx in 0..p {
                                tok[i] = x.data()[((cb * d + dd) * h + rb * p + y) * w + kb * p + xx];
                                i += 1;
                            }
                        }
                    }
                    let mean = tok.iter().sum::<f64>() / dim as f64;
                    let var = tok.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / dim as f64;
                    out.extend(tok.iter().map(|v| (v - mean) / (var + LN_EPS).sqrt()));
                }
            }
        }
        out
    }

    #[test]
    fn identity_embedding_matches_normalized_patches() {
        let (p, d, dim) = (2, 2, 10);
        let cfg = StereoEmbedConfig::new(p, d, dim).unwrap();
        let x = Tensor::randn([4, 4, 6], 1.0, &mut rng()).unwrap();
        let g = cfg.geometry(4, 4, 6).unwrap();
        let mut store = ParamStore::new();
        EmbedWeights::init(&mut store, "e", &cfg, g.count(), &mut rng()).unwrap();
        let mut delta = vec![0.0; 27];
        delta[13] = 1.0;
        *store.get_mut("e.conv.weight").unwrap() = Tensor::new([1, 1, 3, 3, 3], delta).unwrap();
        let vol = cfg.token_volume();
        let mut ext = vec![0.0; vol * dim];
        for i in 0..vol {
            ext[i * dim + i] = 1.0;
        }
        *store.get_mut("e.proj.weight").unwrap() = Tensor::new([vol, dim], ext).unwrap();
        *store.get_mut("e.pos").unwrap() = Tensor::zeros([g.count(), dim]).unwrap();

        let tape = Tape::no_grad();
        let w = EmbedWeights::bind(&store.bind(&tape), "e").unwrap();
        let seq = stereo_embed(&tape, tape.constant(&x), &cfg, &w).unwrap();
        assert_eq!(tape.shape(seq.tokens), vec![g.count(), dim]);
        let got = tape.value(seq.tokens);
        let want = normalized_patches_oracle(&x, p, d, dim);
        for (a, b) in got.data().iter().zip(&want) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn embed_pipeline_gradients() {
        let cfg = StereoEmbedConfig::new(2, 2, 5).unwrap();
        let mut r = rng();
        let x = Tensor::randn([4, 4, 4], 1.0, &mut r).unwrap();
        let mut store = ParamStore::new();
        EmbedWeights::init(&mut store, "e", &cfg, 8, &mut r).unwrap();
        RevertWeights::init(&mut store, "r", &cfg, &mut r).unwrap();
        let names: Vec<String> = store.names().map(String::from).collect();
        let mut inputs = vec![x];
        inputs.extend(names.iter().map(|n| store.get(n).unwrap().clone()));
        let report = check_gradients(
            |tape, v| {
                let mut b = Bindings::default();
                for (n, &var) in names.iter().zip(&v[1..]) {
                    b.insert(n.clone(), var);
                }
                let seq = stereo_embed(tape, v[0], &cfg, &EmbedWeights::bind(&b, "e")?)?;
                let back = patch_revert(tape, &seq, 4, &RevertWeights::bind(&b, "r")?)?;
                random_projection(tape, back, 3)
            },
            &inputs,
            &GradCheck::default(),
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }
}
