//! Reduce-on-plateau learning-rate schedule driven by validation NME.

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PlateauScheduler {
    lr: f64,
    decay: f64,
    patience: usize,
    threshold: f64,
    best: f64,
    bad_epochs: usize,
}

impl PlateauScheduler {
    pub fn new(lr0: f64, decay: f64, patience: usize, threshold: f64) -> Result<Self> {
        if !(lr0 >= 0.0 && lr0.is_finite()) {
            return Err(Error::Config(format!("lr0 must be finite and >= 0, got {lr0}")));
        }
        if !(decay > 0.0 && decay < 1.0) {
            return Err(Error::Config(format!("decay must lie in (0, 1), got {decay}")));
        }
        if patience == 0 || !(threshold >= 0.0) {
            return Err(Error::Config("patience >= 1 and threshold >= 0 required".into()));
        }
        Ok(PlateauScheduler {
            lr: lr0,
            decay,
            patience,
            threshold,
            best: f64::INFINITY,
            bad_epochs: 0,
        })
    }

    /// Rebuilds a scheduler mid-run (checkpoint restore).
    pub fn from_state(
        lr: f64,
        decay: f64,
        patience: usize,
        threshold: f64,
        best: f64,
        bad_epochs: usize,
    ) -> Result<Self> {
        let mut s = Self::new(lr, decay, patience, threshold)?;
        s.best = best;
        s.bad_epochs = bad_epochs;
        Ok(s)
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }
    pub fn decay(&self) -> f64 {
        self.decay
    }
    pub fn patience(&self) -> usize {
        self.patience
    }
    pub fn threshold(&self) -> f64 {
        self.threshold
    }
    pub fn best(&self) -> f64 {
        self.best
    }
    pub fn bad_epochs(&self) -> usize {
        self.bad_epochs
    }

    /// Records the validation NME of the untrained model as the reference.
    pub fn baseline(&mut self, nme: f64) {
        self.best = nme;
        self.bad_epochs = 0;
    }

    /// Feeds one epoch's validation NME and returns the rate for the next epoch.
    ///
    /// An epoch improves when `nme < best − threshold`. After `patience`
    /// consecutive epochs without improvement the rate is multiplied by
    /// `decay` and the count restarts.
    pub fn step(&mut self, nme: f64) -> f64 {
        if nme < self.best - self.threshold {
            self.best = nme;
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
            if self.bad_epochs >= self.patience {
                self.lr *= self.decay;
                self.bad_epochs = 0;
            }
        }
        self.lr
    }
}

/// Learning rate in force after each entry of `trace`, given a baseline NME.
pub fn lr_trace(mut sched: PlateauScheduler, baseline: f64, trace: &[f64]) -> Vec<f64> {
    sched.baseline(baseline);
    trace.iter().map(|&v| sched.step(v)).collect()
}
