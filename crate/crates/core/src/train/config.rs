use crate::error::{Error, Result};

use super::adam::AdamParams;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_adam: f64,
    pub epochs: usize,
    pub batch_train: usize,
    pub batch_val: usize,
    pub early_stop_patience: usize,
    pub plateau_patience: usize,
    pub plateau_factor: f64,
    pub min_lr: f64,
    pub min_delta: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps_adam: 1e-8,
            epochs: 50,
            batch_train: 8,
            batch_val: 4,
            early_stop_patience: 10,
            plateau_patience: 5,
            plateau_factor: 0.1,
            min_lr: 1e-7,
            min_delta: 0.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            bad.push(format!("lr must be > 0 (got {})", self.lr));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                bad.push(format!("{name} must lie in [0, 1) (got {b})"));
            }
        }
        if !(self.eps_adam > 0.0) {
            bad.push(format!("eps_adam must be > 0 (got {})", self.eps_adam));
        }
        if self.batch_train == 0 || self.batch_val == 0 {
            bad.push("batch sizes must be >= 1".into());
        }
        if self.early_stop_patience == 0 || self.plateau_patience == 0 {
            bad.push("patience values must be >= 1".into());
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            bad.push(format!("plateau_factor must lie in (0, 1) (got {})", self.plateau_factor));
        }
        if !(self.min_lr >= 0.0) || !(self.min_delta >= 0.0) {
            bad.push("min_lr and min_delta must be >= 0".into());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::config(bad.join("; ")))
        }
    }

    pub fn adam(&self) -> AdamParams {
        AdamParams {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps_adam,
        }
    }
}
