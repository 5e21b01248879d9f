//! Controlled comparisons of architectural variants.

use std::fmt;
use std::str::FromStr;

use super::eval::{evaluate, PromptPolicy};
use super::loss::LossConfig;
use super::trainer::{DataSpec, TrainConfig, Trainer};
use crate::attention::{Affinity, AttentionVariant, ConnectMode};
use crate::dcffn::FfnVariant;
use crate::error::{Error, Result};
use crate::model::{count_flops, count_params, ModelConfig, PromptMode, Restorer};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationAxis {
    Attention,
    Ffn,
    Prompt,
    AaaConnect,
    Affinity,
}

impl AblationAxis {
    pub const ALL: [AblationAxis; 5] = [
        AblationAxis::Attention,
        AblationAxis::Ffn,
        AblationAxis::Prompt,
        AblationAxis::AaaConnect,
        AblationAxis::Affinity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationAxis::Attention => "attention",
            AblationAxis::Ffn => "ffn",
            AblationAxis::Prompt => "prompt",
            AblationAxis::AaaConnect => "aaa_connect",
            AblationAxis::Affinity => "affinity",
        }
    }

    /// Row labels and configs in table order, derived from `base`.
    pub fn variants(self, base: &ModelConfig) -> Vec<(String, ModelConfig)> {
        let with = |f: &dyn Fn(&mut ModelConfig)| {
            let mut c = base.clone();
            f(&mut c);
            c
        };
        match self {
            AblationAxis::Attention => AttentionVariant::ALL
                .iter()
                .map(|&v| (v.row_label().to_string(), with(&|c| c.attention = v)))
                .collect(),
            AblationAxis::Ffn => FfnVariant::ALL
                .iter()
                .map(|&v| (v.row_label().to_string(), with(&|c| c.ffn = v)))
                .collect(),
            AblationAxis::Prompt => [PromptMode::Learnable, PromptMode::Text]
                .iter()
                .map(|&v| (v.row_label().to_string(), with(&|c| c.prompt = v)))
                .collect(),
            AblationAxis::AaaConnect => [ConnectMode::Off, ConnectMode::On]
                .iter()
                .map(|&v| (v.row_label().to_string(), with(&|c| c.connect = v)))
                .collect(),
            AblationAxis::Affinity => Affinity::ALL
                .iter()
                .map(|&v| (v.row_label().to_string(), with(&|c| c.affinity = v)))
                .collect(),
        }
    }
}

impl fmt::Display for AblationAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AblationAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "attention" => Ok(AblationAxis::Attention),
            "ffn" => Ok(AblationAxis::Ffn),
            "prompt" => Ok(AblationAxis::Prompt),
            "aaa_connect" | "connect" | "connection" => Ok(AblationAxis::AaaConnect),
            "affinity" => Ok(AblationAxis::Affinity),
            _ => Err(Error::Usage(format!(
                "unknown ablation axis '{s}' (expected attention, ffn, prompt, aaa_connect or affinity)"
            ))),
        }
    }
}

/// Everything shared by the variants of one ablation.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationSettings {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub loss: LossConfig,
    pub data: DataSpec,
    /// Parameter initialization seed, identical for every variant.
    pub init_seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub label: String,
    pub params: usize,
    pub flops: u64,
    pub psnr: f64,
    pub ssim: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationTable {
    pub axis: AblationAxis,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    /// Row labels sorted by held-out PSNR, best first.
    pub fn ordering(&self) -> Vec<&str> {
        let mut rows: Vec<&AblationRow> = self.rows.iter().collect();
        rows.sort_by(|a, b| b.psnr.total_cmp(&a.psnr));
        rows.into_iter().map(|r| r.label.as_str()).collect()
    }
}

impl fmt::Display for AblationTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let w = self.rows.iter().map(|r| r.label.len()).max().unwrap_or(7).max(7);
        writeln!(f, "ablation: {}", self.axis)?;
        writeln!(
            f,
            "{:<w$} | {:>8} | {:>6} | {:>9} | {:>9} | {:>7}",
            "Setting", "PSNR", "SSIM", "loss", "params", "GFLOPs"
        )?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<w$} | {:>8.3} | {:>6.4} | {:>9.6} | {:>9} | {:>7.3}",
                r.label,
                r.psnr,
                r.ssim,
                r.loss,
                r.params,
                r.flops as f64 / 1e9
            )?;
        }
        write!(f, "ordering by PSNR (not significant at this scale): {}", self.ordering().join(" > "))
    }
}

/// Trains and evaluates every variant of `axis` on the same data and seeds.
pub fn run_ablation(axis: AblationAxis, settings: &AblationSettings) -> Result<AblationTable> {
    let (train, test) = settings.data.generate()?;
    let mut rows = Vec::new();
    for (label, cfg) in axis.variants(&settings.model) {
        log::info!("ablation {axis}: training '{label}'");
        let model = Restorer::build(cfg.clone(), settings.init_seed)?;
        let mut t = Trainer::new(model, settings.train.clone(), settings.loss.clone())?;
        t.fit(&train, &test, None)?;
        let rep = evaluate(t.model(), &test, PromptPolicy::Correct)?;
        rows.push(AblationRow {
            label,
            params: count_params(&cfg)?,
            flops: count_flops(&cfg)?.total(),
            psnr: rep.mean_psnr(),
            ssim: rep.mean_ssim(),
            loss: rep.mean_loss(),
        });
    }
    Ok(AblationTable { axis, rows })
}
