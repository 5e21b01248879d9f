//! Adam with bias correction and the step learning-rate schedule.

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: IndexMap<String, Vec<f64>>,
    v: IndexMap<String, Vec<f64>>,
}

impl Default for Adam {
    fn default() -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: IndexMap::new(),
            v: IndexMap::new(),
        }
    }
}

impl Adam {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of updates applied so far.
    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self, name: &str) -> Option<&[f64]> {
        self.m.get(name).map(Vec::as_slice)
    }

    pub fn second_moment(&self, name: &str) -> Option<&[f64]> {
        self.v.get(name).map(Vec::as_slice)
    }

    /// Updates every trainable tensor from its accumulated gradient.
    /// Every trainable tensor must carry a gradient.
    pub fn step(&mut self, params: &mut ParamStore, lr: f64) -> Result<()> {
        if let Some((name, _)) = params.iter().find(|(_, t)| t.requires_grad() && t.grad().is_none()) {
            return Err(Error::Usage(format!("parameter {name} has no gradient; run backward first")));
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for (name, t) in params.iter_mut() {
            if !t.requires_grad() {
                continue;
            }
            let g = t.grad().expect("checked above").to_vec();
            let m = self.m.entry(name.to_string()).or_insert_with(|| vec![0.0; g.len()]);
            let v = self.v.entry(name.to_string()).or_insert_with(|| vec![0.0; g.len()]);
            for (((p, g), m), v) in t.data_mut().iter_mut().zip(&g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
            }
        }
        Ok(())
    }

    /// Moments as named tensors (`adam.m.<param>`, `adam.v.<param>`) plus
    /// the step count (`adam.t`).
    pub fn state_tensors(&self) -> IndexMap<String, Tensor> {
        let mut out = IndexMap::new();
        out.insert("adam.t".to_string(), Tensor::scalar(self.t as f64));
        for (prefix, moments) in [("adam.m.", &self.m), ("adam.v.", &self.v)] {
            for (name, data) in moments {
                let t = Tensor::new([data.len()], data.clone()).expect("1-D tensor");
                out.insert(format!("{prefix}{name}"), t);
            }
        }
        out
    }

    /// Inverse of [`Self::state_tensors`]; unrelated entries are ignored.
    pub fn from_state_tensors(state: &IndexMap<String, Tensor>) -> Result<Self> {
        let mut adam = Adam::default();
        if let Some(t) = state.get("adam.t") {
            let steps = t.item()?;
            if !(steps >= 0.0 && steps.fract() == 0.0) {
                return Err(Error::Incompatible(format!("invalid optimizer step count {steps}")));
            }
            adam.t = steps as u64;
        }
        for (name, t) in state {
            if let Some(p) = name.strip_prefix("adam.m.") {
                adam.m.insert(p.to_string(), t.data().to_vec());
            } else if let Some(p) = name.strip_prefix("adam.v.") {
                adam.v.insert(p.to_string(), t.data().to_vec());
            }
        }
        Ok(adam)
    }
}

/// Constant learning rate, halved once after `decay_start` epochs and again
/// every `decay_every` epochs after that. Epochs count from 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub base: f64,
    pub decay_start: usize,
    pub decay_every: usize,
}

impl LrSchedule {
    pub fn new(base: f64, decay_start: usize, decay_every: usize) -> Self {
        LrSchedule {
            base,
            decay_start,
            decay_every,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base > 0.0 && self.base.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.base)));
        }
        if self.decay_every == 0 {
            return Err(Error::Config("lr decay interval must be at least 1 epoch".into()));
        }
        Ok(())
    }

    /// Number of halvings in effect during `epoch`.
    pub fn halvings(&self, epoch: usize) -> u32 {
        if epoch <= self.decay_start {
            0
        } else {
            ((epoch - self.decay_start) / self.decay_every + 1) as u32
        }
    }

    pub fn lr(&self, epoch: usize) -> f64 {
        self.base * 0.5f64.powi(self.halvings(epoch) as i32)
    }
}
