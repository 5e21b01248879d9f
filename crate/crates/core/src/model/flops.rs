//! Analytic FLOP accounting.
//!
//! Counts `2 × multiply-accumulates` of every convolution and matrix
//! product in the forward pass. Elementwise work (activations, norms,
//! softmax, residual adds) is not counted.

use std::fmt;

use crate::attention::{head_dim, AttentionVariant, Affinity};
use crate::error::Result;
use crate::model::ModelConfig;

/// FLOPs attributed to one named layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlopEntry {
    pub layer: String,
    pub kind: &'static str,
    pub flops: u64,
}

/// Per-layer breakdown of a forward pass.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FlopReport {
    pub entries: Vec<FlopEntry>,
}

impl FlopReport {
    pub fn total(&self) -> u64 {
        self.entries.iter().map(|e| e.flops).sum()
    }

    /// Sum over entries whose layer name starts with `prefix`.
    pub fn total_for(&self, prefix: &str) -> u64 {
        self.entries.iter().filter(|e| e.layer.starts_with(prefix)).map(|e| e.flops).sum()
    }

    /// Sum over entries of one kind (`conv`, `linear`, `attention`, ...).
    pub fn total_kind(&self, kind: &str) -> u64 {
        self.entries.iter().filter(|e| e.kind == kind).map(|e| e.flops).sum()
    }

    fn push(&mut self, layer: impl Into<String>, kind: &'static str, macs: usize) {
        self.entries.push(FlopEntry {
            layer: layer.into(),
            kind,
            flops: 2 * macs as u64,
        });
    }
}

impl fmt::Display for FlopReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let w = self.entries.iter().map(|e| e.layer.len()).max().unwrap_or(5).max(5);
        writeln!(f, "{:<w$}  {:<10}  {:>16}", "layer", "kind", "flops")?;
        for e in &self.entries {
            writeln!(f, "{:<w$}  {:<10}  {:>16}", e.layer, e.kind, e.flops)?;
        }
        writeln!(f, "{:<w$}  {:<10}  {:>16}", "total", "", self.total())?;
        write!(f, "{:<w$}  {:<10}  {:>15.3}G", "", "", self.total() as f64 / 1e9)
    }
}

/// 2-D conv multiply-accumulates.
pub fn conv2d_macs(c_in: usize, c_out: usize, k: usize, out_h: usize, out_w: usize) -> usize {
    c_in * c_out * k * k * out_h * out_w
}

/// Per-layer FLOPs of one forward pass of `config`.
pub fn count_flops(config: &ModelConfig) -> Result<FlopReport> {
    config.validate()?;
    let mut r = FlopReport::default();
    let levels = config.stages.len();
    let d = config.dim;
    for i in 0..levels {
        let [cin, h, _] = config.stage_in_shape(i);
        let mid = config.stage_mid_channels(i);
        let [w, ho, _] = config.stage_out_shape(i);
        let pre = format!("enc{}", i + 1);
        r.push(format!("{pre}.conv1"), "conv", conv2d_macs(cin, mid, 3, h, h));
        r.push(format!("{pre}.conv2"), "conv", conv2d_macs(mid, mid, 3, h, h));
        r.push(format!("{pre}.down"), "conv", conv2d_macs(mid, w, 3, ho, ho));
    }
    for i in 0..levels {
        let st = config.stages[i];
        let g = config.geometry(i)?;
        let (n, vol) = (g.count(), g.volume());
        let pre = format!("stage{}", i + 1);
        r.push(format!("{pre}.embed.conv"), "conv3d", n * 27 * vol);
        r.push(format!("{pre}.embed.proj"), "linear", n * vol * d);
        if i > 0 && config.connect == crate::attention::ConnectMode::On {
            let np = config.geometry(i - 1)?.count();
            if np != n {
                r.push(format!("{pre}.connect"), "pool", n * np * d);
            }
        }
        let dh = head_dim(d, st.heads)?;
        for j in 0..st.layers {
            let b = format!("{pre}.block{}", j + 1);
            let token_attn = |r: &mut FlopReport, name: String, affinity: Affinity| {
                r.push(format!("{name}.qkvo"), "linear", 4 * n * d * d);
                r.push(format!("{name}.scores"), "attention", n * n * d);
                if affinity == Affinity::Projection {
                    r.push(format!("{name}.mix"), "attention", st.heads * st.heads * n * n);
                }
                r.push(format!("{name}.weighted"), "attention", n * n * d);
            };
            let channel_attn = |r: &mut FlopReport, name: String| {
                r.push(format!("{name}.qkvo"), "linear", 4 * n * d * d);
                r.push(format!("{name}.scores"), "attention", d * dh * n);
                r.push(format!("{name}.weighted"), "attention", d * dh * n);
            };
            let attn = format!("{b}.attn");
            match config.attention {
                AttentionVariant::Aaa | AttentionVariant::Spatial => token_attn(&mut r, attn, config.affinity),
                AttentionVariant::Channel => channel_attn(&mut r, attn),
                AttentionVariant::Osa => {
                    token_attn(&mut r, format!("{attn}.spatial"), config.affinity);
                    channel_attn(&mut r, format!("{attn}.channel"));
                }
            }
            r.push(format!("{b}.ffn"), "ffn", config.ffn_config(i).macs(n)?);
        }
        r.push(format!("{pre}.revert"), "linear", n * d * vol);
    }
    for i in (0..levels).rev() {
        let [c, h, _] = config.stage_out_shape(i);
        let ct = config.stage_mid_channels(i);
        let hp = 2 * h;
        let pre = format!("dec{}", i + 1);
        r.push(format!("{pre}.up"), "conv_t", c * ct * 4 * h * h);
        r.push(format!("{pre}.fuse"), "conv", conv2d_macs(2 * ct, ct, 1, hp, hp));
        r.push(format!("{pre}.conv1"), "conv", conv2d_macs(ct, ct, 3, hp, hp));
        r.push(format!("{pre}.conv2"), "conv", conv2d_macs(ct, ct, 3, hp, hp));
    }
    let s = config.image_size;
    r.push("out", "conv", conv2d_macs(config.stem, 3, 3, s, s));
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn definitional_cases() {
        assert_eq!(2 * conv2d_macs(1, 1, 1, 4, 4), 32);
        assert_eq!(2 * (2048 * 512 * 512) as u64, 1_073_741_824);
    }

    #[test]
    fn paper_total_in_band() {
        let t = count_flops(&ModelConfig::paper()).unwrap().total();
        assert!((117_000_000_000..=177_000_000_000).contains(&t), "{t}");
    }
}
