use std::f64::consts::PI;

use crate::error::{ensure, Result};

/// Linear warmup from 0 to `peak_lr`, then a half-cosine down to `floor_lr`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrSchedule {
    pub peak_lr: f64,
    pub floor_lr: f64,
    pub warmup_epochs: usize,
    pub total_epochs: usize,
}

impl LrSchedule {
    pub fn new(peak_lr: f64, floor_lr: f64, warmup_epochs: usize, total_epochs: usize) -> Result<Self> {
        let s = Self {
            peak_lr,
            floor_lr,
            warmup_epochs,
            total_epochs,
        };
        s.validate()?;
        Ok(s)
    }

    /// Pre-training recipe: peak 1e-3, 40 warmup epochs, 500 epochs.
    pub fn pretrain_preset() -> Self {
        Self {
            peak_lr: 1e-3,
            floor_lr: 0.0,
            warmup_epochs: 40,
            total_epochs: 500,
        }
    }

    /// Fine-tuning recipe: peak 1e-5, 4 warmup epochs, 50 epochs.
    pub fn finetune_preset() -> Self {
        Self {
            peak_lr: 1e-5,
            floor_lr: 0.0,
            warmup_epochs: 4,
            total_epochs: 50,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.peak_lr > 0.0, Contract, "peak lr must be positive");
        ensure!(
            self.floor_lr >= 0.0 && self.floor_lr <= self.peak_lr,
            Contract,
            "floor lr {} outside [0, peak {}]",
            self.floor_lr,
            self.peak_lr
        );
        ensure!(
            self.total_epochs > self.warmup_epochs,
            Contract,
            "total epochs {} must exceed warmup {}",
            self.total_epochs,
            self.warmup_epochs
        );
        Ok(())
    }

    pub fn lr(&self, epoch: usize) -> Result<f64> {
        cosine_lr(epoch, self)
    }
}

pub fn cosine_lr(epoch: usize, sched: &LrSchedule) -> Result<f64> {
    sched.validate()?;
    ensure!(
        epoch <= sched.total_epochs,
        Contract,
        "epoch {epoch} beyond schedule of {} epochs",
        sched.total_epochs
    );
    if epoch < sched.warmup_epochs {
        return Ok(sched.peak_lr * epoch as f64 / sched.warmup_epochs as f64);
    }
    if epoch == sched.total_epochs {
        return Ok(sched.floor_lr);
    }
    let span = (sched.total_epochs - sched.warmup_epochs) as f64;
    let progress = (epoch - sched.warmup_epochs) as f64 / span;
    Ok(sched.floor_lr + 0.5 * (sched.peak_lr - sched.floor_lr) * (1.0 + (PI * progress).cos()))
}
