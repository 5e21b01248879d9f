//! The training loop.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use indexmap::IndexMap;
use rand::seq::SliceRandom;

use super::loss::{total_loss, FeatureExtractor, LossConfig};
use super::optim::{Adam, LrSchedule};
use crate::data::{make_dataset, sample_rng, DegradationKind, PairedSample};
use crate::error::{Error, Result};
use crate::metrics::{psnr, ssim};
use crate::model::{write_checkpoint, Checkpoint, Restorer};
use crate::prompts::TextEncoder;
use crate::tape::Tape;

/// Optimization settings.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Stops after this many optimizer steps, possibly mid-epoch.
    pub max_steps: Option<usize>,
    pub batch_size: usize,
    pub schedule: LrSchedule,
    pub seed: u64,
    /// Write a checkpoint every this many epochs; 0 writes only the final one.
    pub checkpoint_every: usize,
    /// Global gradient-norm clip, off by default.
    pub grad_clip: Option<f64>,
}

impl TrainConfig {
    /// 250 epochs, batch 26.
    pub fn paper() -> Self {
        TrainConfig {
            epochs: 250,
            max_steps: None,
            batch_size: 26,
            schedule: LrSchedule::new(1e-4, 60, 50),
            seed: 0,
            checkpoint_every: 10,
            grad_clip: None,
        }
    }

    /// Batch 8 capped at 2000 steps.
    pub fn toy() -> Self {
        TrainConfig {
            epochs: 250,
            max_steps: Some(2000),
            batch_size: 8,
            schedule: LrSchedule::new(1e-4, 60, 50),
            seed: 0,
            checkpoint_every: 0,
            grad_clip: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.max_steps == Some(0) {
            return Err(Error::Config("epochs, batch size and step limit must be positive".into()));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::Config(format!("gradient clip must be positive, got {c}")));
            }
        }
        self.schedule.validate()
    }
}

/// How to generate the synthetic train/test split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataSpec {
    pub train: usize,
    pub test: usize,
    pub size: usize,
    pub kinds: Vec<DegradationKind>,
    pub seed: u64,
}

impl DataSpec {
    pub fn new(train: usize, test: usize, size: usize, kinds: &[DegradationKind], seed: u64) -> Self {
        DataSpec {
            train,
            test,
            size,
            kinds: kinds.to_vec(),
            seed,
        }
    }

    /// `(train, test)`; the test split is the tail of one generated sequence.
    pub fn generate(&self) -> Result<(Vec<PairedSample>, Vec<PairedSample>)> {
        if self.train == 0 || self.test == 0 {
            return Err(Error::Usage("train and test splits must both be non-empty".into()));
        }
        let mut all = make_dataset(self.train + self.test, self.size, &self.kinds, self.seed)?;
        let test = all.split_off(self.train);
        Ok((all, test))
    }
}

/// One row of the metrics log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training loss over the epoch's steps.
    pub loss: f64,
    /// Held-out PSNR and SSIM.
    pub psnr: f64,
    pub ssim: f64,
    pub lr: f64,
}

pub const CSV_HEADER: &str = "epoch,loss,psnr,ssim,lr";

impl EpochRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.8},{:.6},{:.8},{:.6e}",
            self.epoch, self.loss, self.psnr, self.ssim, self.lr
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// Loss of every optimizer step in this run.
    pub step_losses: Vec<f64>,
    pub checkpoint: Option<PathBuf>,
}

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const METRICS_FILE: &str = "metrics.csv";

/// Owns a model and its optimizer state.
pub struct Trainer {
    model: Restorer,
    adam: Adam,
    cfg: TrainConfig,
    loss: LossConfig,
    extractor: Option<Arc<dyn FeatureExtractor>>,
    epoch: usize,
    step: usize,
}

impl Trainer {
    pub fn new(model: Restorer, cfg: TrainConfig, loss: LossConfig) -> Result<Self> {
        cfg.validate()?;
        let extractor = loss.extractor()?;
        Ok(Trainer {
            model,
            adam: Adam::new(),
            cfg,
            loss,
            extractor,
            epoch: 0,
            step: 0,
        })
    }

    /// Continues from a checkpoint written by [`Self::checkpoint`].
    pub fn resume(ckpt: Checkpoint, cfg: TrainConfig, loss: LossConfig) -> Result<Self> {
        let meta_usize = |key: &str| -> Result<usize> {
            ckpt.meta
                .get(key)
                .ok_or_else(|| Error::Incompatible(format!("checkpoint has no training state ({key})")))?
                .parse()
                .map_err(|_| Error::Incompatible(format!("bad {key} in checkpoint")))
        };
        let (epoch, step) = (meta_usize("epoch")?, meta_usize("step")?);
        let adam = Adam::from_state_tensors(&ckpt.state)?;
        let mut t = Trainer::new(ckpt.into_model()?, cfg, loss)?;
        t.adam = adam;
        t.epoch = epoch;
        t.step = step;
        Ok(t)
    }

    pub fn model(&self) -> &Restorer {
        &self.model
    }

    /// Swaps the model's prompt encoder, e.g. after [`Self::resume`].
    pub fn with_encoder(mut self, encoder: Arc<dyn TextEncoder>) -> Result<Self> {
        self.model = self.model.with_encoder(encoder)?;
        Ok(self)
    }

    pub fn into_model(self) -> Restorer {
        self.model
    }

    pub fn optimizer(&self) -> &Adam {
        &self.adam
    }

    /// Completed epochs.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// Completed optimizer steps.
    pub fn step(&self) -> usize {
        self.step
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut ckpt = Checkpoint::from_model(&self.model);
        ckpt.state = self.adam.state_tensors();
        let mut meta = IndexMap::new();
        meta.insert("epoch".to_string(), self.epoch.to_string());
        meta.insert("step".to_string(), self.step.to_string());
        ckpt.meta = meta;
        ckpt
    }

    /// Mean loss of `batch`, leaving its gradient in the parameters.
    pub fn accumulate_batch(&mut self, batch: &[&PairedSample]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Data("empty batch".into()));
        }
        self.model.params_mut().zero_grads();
        let inv = 1.0 / batch.len() as f64;
        let mut total = 0.0;
        for s in batch {
            let tape = Tape::new();
            let b = self.model.params().bind(&tape);
            let y = self.model.forward(&tape, &b, tape.constant(&s.degraded), &s.label)?;
            let l = total_loss(&tape, y, tape.constant(&s.clean), &self.loss, self.extractor.as_deref())?;
            let value = tape.item(l)?;
            if !value.is_finite() {
                return Err(Error::Numeric { op: "loss" });
            }
            total += value;
            let grads = tape.backward(tape.scale(l, inv)?)?;
            self.model.params_mut().accumulate_grads(&b, &grads)?;
        }
        Ok(total * inv)
    }

    fn clip_gradients(&mut self, max_norm: f64) {
        let norm = self
            .model
            .params()
            .iter()
            .filter_map(|(_, t)| t.grad())
            .flatten()
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt();
        if norm > max_norm {
            let s = max_norm / norm;
            for (_, t) in self.model.params_mut().iter_mut() {
                if let Some(g) = t.grad().map(|g| g.iter().map(|v| v * s).collect::<Vec<_>>()) {
                    t.zero_grad();
                    t.accumulate_grad(&g).expect("same length");
                }
            }
        }
    }

    /// One optimizer step on `batch` at the learning rate of the current epoch.
    pub fn train_step(&mut self, batch: &[&PairedSample]) -> Result<f64> {
        let loss = self.accumulate_batch(batch)?;
        if let Some(c) = self.cfg.grad_clip {
            self.clip_gradients(c);
        }
        let lr = self.cfg.schedule.lr(self.epoch + 1);
        self.adam.step(self.model.params_mut(), lr)?;
        self.step += 1;
        Ok(loss)
    }

    fn finished(&self) -> bool {
        self.epoch >= self.cfg.epochs || self.cfg.max_steps.is_some_and(|m| self.step >= m)
    }

    /// Trains until the epoch or step budget is spent. With `out`, keeps
    /// `metrics.csv` and `checkpoint.bin` there.
    pub fn fit(&mut self, train: &[PairedSample], test: &[PairedSample], out: Option<&Path>) -> Result<TrainReport> {
        if train.is_empty() {
            return Err(Error::Data("training set is empty".into()));
        }
        if test.is_empty() {
            return Err(Error::Data("held-out set is empty".into()));
        }
        let size = self.model.config().image_size;
        if let Some(s) = train.iter().chain(test).find(|s| s.clean.shape() != [3, size, size]) {
            return Err(Error::Data(format!(
                "sample of shape {:?} does not match the model input [3, {size}, {size}]",
                s.clean.shape()
            )));
        }
        let log = match out {
            Some(dir) => Some(prepare_log(dir, self.epoch)?),
            None => None,
        };
        let mut report = TrainReport::default();
        while !self.finished() {
            let epoch = self.epoch + 1;
            let lr = self.cfg.schedule.lr(epoch);
            let mut order: Vec<usize> = (0..train.len()).collect();
            order.shuffle(&mut sample_rng(self.cfg.seed, epoch as u64));
            let mut losses = Vec::new();
            for chunk in order.chunks(self.cfg.batch_size) {
                if self.cfg.max_steps.is_some_and(|m| self.step >= m) {
                    break;
                }
                let batch: Vec<&PairedSample> = chunk.iter().map(|&i| &train[i]).collect();
                let l = self.train_step(&batch)?;
                log::debug!("epoch {epoch} step {} loss {l:.6}", self.step);
                losses.push(l);
            }
            self.epoch = epoch;
            let (p, s) = held_out_metrics(&self.model, test)?;
            let rec = EpochRecord {
                epoch,
                loss: losses.iter().sum::<f64>() / losses.len().max(1) as f64,
                psnr: p,
                ssim: s,
                lr,
            };
            log::info!(
                "epoch {epoch}: loss {:.6} psnr {:.3} ssim {:.4} lr {:.2e} (step {})",
                rec.loss,
                rec.psnr,
                rec.ssim,
                rec.lr,
                self.step
            );
            report.step_losses.extend(losses);
            report.epochs.push(rec);
            if let (Some(dir), Some(log)) = (out, &log) {
                append_line(log, &rec.csv_row())?;
                let every = self.cfg.checkpoint_every;
                if every > 0 && epoch % every == 0 && !self.finished() {
                    write_checkpoint(dir.join(CHECKPOINT_FILE), &self.checkpoint())?;
                }
            }
        }
        if let Some(dir) = out {
            let path = dir.join(CHECKPOINT_FILE);
            write_checkpoint(&path, &self.checkpoint())?;
            report.checkpoint = Some(path);
        }
        Ok(report)
    }
}

/// Mean PSNR and SSIM of the restored held-out images.
pub fn held_out_metrics(model: &Restorer, test: &[PairedSample]) -> Result<(f64, f64)> {
    let (mut p, mut s) = (0.0, 0.0);
    for sample in test {
        let y = model.restore(&sample.degraded, &sample.label)?;
        p += psnr(&y, &sample.clean, 1.0)?;
        s += ssim(&y, &sample.clean)?;
    }
    let n = test.len() as f64;
    Ok((p / n, s / n))
}

/// Creates `dir/metrics.csv`, keeping only the header and rows up to
/// `completed` epochs from an earlier run.
fn prepare_log(dir: &Path, completed: usize) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(METRICS_FILE);
    let mut kept = vec![CSV_HEADER.to_string()];
    if completed > 0 {
        if let Ok(text) = std::fs::read_to_string(&path) {
            kept.extend(
                text.lines()
                    .skip(1)
                    .filter(|l| l.split(',').next().and_then(|e| e.parse::<usize>().ok()).is_some_and(|e| e <= completed))
                    .map(str::to_string),
            );
        }
    }
    let mut body = kept.join("\n");
    body.push('\n');
    std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

fn append_line(path: &Path, line: &str) -> Result<()> {
    let mut f = OpenOptions::new().append(true).open(path).map_err(|e| Error::io(path, e))?;
    writeln!(f, "{line}").map_err(|e| Error::io(path, e))
}

/// Builds a trainer for `model` and runs it to completion.
pub fn train(
    model: Restorer,
    train: &[PairedSample],
    test: &[PairedSample],
    cfg: &TrainConfig,
    loss: &LossConfig,
    out: Option<&Path>,
) -> Result<(Restorer, TrainReport)> {
    let mut t = Trainer::new(model, cfg.clone(), loss.clone())?;
    let report = t.fit(train, test, out)?;
    Ok((t.into_model(), report))
}
