//! Per-kind restoration metrics under a prompt policy.

use std::fmt;

use crate::data::PairedSample;
use crate::error::{Error, Result};
use crate::metrics::{psnr, ssim};
use crate::model::RestorationModel;
use crate::prompts::BUILTIN_VOCABULARY;
use crate::tensor::Tensor;

/// Which prompt each sample is restored with.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PromptPolicy {
    /// The sample's own label.
    Correct,
    /// The next label in the dataset's label order (cyclic).
    Swapped,
}

impl PromptPolicy {
    pub fn name(self) -> &'static str {
        match self {
            PromptPolicy::Correct => "correct",
            PromptPolicy::Swapped => "swapped",
        }
    }
}

impl fmt::Display for PromptPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Label used in place of `label` under the swapped policy. With a single
/// label in the dataset, the next built-in vocabulary entry is used.
pub fn swapped_label(label: &str, labels: &[String]) -> String {
    if labels.len() >= 2 {
        let i = labels.iter().position(|l| l == label).unwrap_or(0);
        return labels[(i + 1) % labels.len()].clone();
    }
    let i = BUILTIN_VOCABULARY.iter().position(|&l| l == label).unwrap_or(0);
    BUILTIN_VOCABULARY[(i + 1) % BUILTIN_VOCABULARY.len()].to_string()
}

/// Mean smooth L1 (`beta = 1`) between two equally shaped tensors.
pub fn smooth_l1_value(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::shape("smooth_l1", format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| {
            let d = (x - y).abs();
            if d < 1.0 {
                0.5 * d * d
            } else {
                d - 0.5
            }
        })
        .sum();
    Ok(sum / a.len() as f64)
}

/// Metrics for one degradation label.
#[derive(Debug, Clone, PartialEq)]
pub struct KindMetrics {
    pub label: String,
    pub count: usize,
    pub psnr: f64,
    pub ssim: f64,
    /// Smooth L1 between restored and clean images.
    pub loss: f64,
    /// Degraded input against clean, for reference.
    pub input_psnr: f64,
    pub input_ssim: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub policy: PromptPolicy,
    /// One row per label, in first-appearance order.
    pub rows: Vec<KindMetrics>,
}

impl EvalReport {
    fn weighted(&self, f: impl Fn(&KindMetrics) -> f64) -> f64 {
        let n: usize = self.rows.iter().map(|r| r.count).sum();
        self.rows.iter().map(|r| f(r) * r.count as f64).sum::<f64>() / n as f64
    }

    /// Sample-weighted means over every row.
    pub fn mean_loss(&self) -> f64 {
        self.weighted(|r| r.loss)
    }

    pub fn mean_psnr(&self) -> f64 {
        self.weighted(|r| r.psnr)
    }

    pub fn mean_ssim(&self) -> f64 {
        self.weighted(|r| r.ssim)
    }

    pub fn mean_input_psnr(&self) -> f64 {
        self.weighted(|r| r.input_psnr)
    }

    pub fn row(&self, label: &str) -> Option<&KindMetrics> {
        self.rows.iter().find(|r| r.label == label)
    }
}

/// Restores every sample under `policy` and averages metrics per label.
pub fn evaluate(model: &dyn RestorationModel, data: &[PairedSample], policy: PromptPolicy) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(Error::Data("evaluation set is empty".into()));
    }
    let labels = crate::data::labels(data);
    let mut sums: Vec<[f64; 5]> = vec![[0.0; 5]; labels.len()];
    let mut counts = vec![0usize; labels.len()];
    for s in data {
        let k = labels.iter().position(|l| *l == s.label).expect("label collected");
        let prompt = match policy {
            PromptPolicy::Correct => s.label.clone(),
            PromptPolicy::Swapped => swapped_label(&s.label, &labels),
        };
        let y = model.restore(&s.degraded, &prompt)?;
        let v = [
            psnr(&y, &s.clean, 1.0)?,
            ssim(&y, &s.clean)?,
            smooth_l1_value(&y, &s.clean)?,
            psnr(&s.degraded, &s.clean, 1.0)?,
            ssim(&s.degraded, &s.clean)?,
        ];
        sums[k].iter_mut().zip(v).for_each(|(a, b)| *a += b);
        counts[k] += 1;
    }
    let rows = labels
        .into_iter()
        .zip(sums.iter().zip(&counts))
        .map(|(label, (s, &n))| {
            let m = |i: usize| s[i] / n as f64;
            KindMetrics {
                label,
                count: n,
                psnr: m(0),
                ssim: m(1),
                loss: m(2),
                input_psnr: m(3),
                input_ssim: m(4),
            }
        })
        .collect();
    Ok(EvalReport { policy, rows })
}

/// Several reports rendered as one table.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalTable(pub Vec<EvalReport>);

impl fmt::Display for EvalTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<8} {:<10} {:>5} {:>9} {:>8} {:>10} {:>9} {:>8}",
            "prompt", "kind", "n", "psnr", "ssim", "loss", "in_psnr", "in_ssim"
        )?;
        for rep in &self.0 {
            for r in &rep.rows {
                writeln!(
                    f,
                    "{:<8} {:<10} {:>5} {:>9.4} {:>8.4} {:>10.6} {:>9.4} {:>8.4}",
                    rep.policy.name(),
                    r.label,
                    r.count,
                    r.psnr,
                    r.ssim,
                    r.loss,
                    r.input_psnr,
                    r.input_ssim
                )?;
            }
            writeln!(
                f,
                "{:<8} {:<10} {:>5} {:>9.4} {:>8.4} {:>10.6} {:>9.4} {:>8}",
                rep.policy.name(),
                "mean",
                rep.rows.iter().map(|r| r.count).sum::<usize>(),
                rep.mean_psnr(),
                rep.mean_ssim(),
                rep.mean_loss(),
                rep.mean_input_psnr(),
                ""
            )?;
        }
        Ok(())
    }
}
