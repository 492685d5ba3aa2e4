/// Verdict of [`EarlyStopping::update`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Decision {
    Continue,
    /// Stop training and restore the weights of `best_epoch` (1-based).
    Stop { best_epoch: usize },
}

/// Best-so-far tracker shared by the callbacks: an improvement must beat the
/// best value by more than `min_delta`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Monitor {
    pub best: Option<f64>,
    pub best_epoch: usize,
    pub wait: usize,
}

impl Monitor {
    pub fn new() -> Self {
        Self {
            best: None,
            best_epoch: 0,
            wait: 0,
        }
    }

    /// Returns whether `value` improved on the best.
    fn observe(&mut self, epoch: usize, value: f64, min_delta: f64) -> bool {
        let improved = match self.best {
            None => true,
            Some(b) => value < b - min_delta,
        };
        if improved {
            self.best = Some(value);
            self.best_epoch = epoch;
            self.wait = 0;
        } else {
            self.wait += 1;
        }
        improved
    }
}

impl Default for Monitor {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub min_delta: f64,
    pub monitor: Monitor,
}

impl EarlyStopping {
    pub fn new(patience: usize, min_delta: f64) -> Self {
        Self {
            patience,
            min_delta,
            monitor: Monitor::new(),
        }
    }

    pub fn update(&mut self, epoch: usize, val_loss: f64) -> Decision {
        self.monitor.observe(epoch, val_loss, self.min_delta);
        if self.monitor.wait >= self.patience {
            Decision::Stop {
                best_epoch: self.monitor.best_epoch,
            }
        } else {
            Decision::Continue
        }
    }
}

/// Replays a whole validation-loss history (epochs numbered from 1).
pub fn early_stopping(val_losses: &[f64], patience: usize, min_delta: f64) -> Decision {
    let mut es = EarlyStopping::new(patience, min_delta);
    let mut decision = Decision::Continue;
    for (i, &l) in val_losses.iter().enumerate() {
        decision = es.update(i + 1, l);
        if decision != Decision::Continue {
            break;
        }
    }
    decision
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReduceLrOnPlateau {
    pub patience: usize,
    pub factor: f64,
    pub min_lr: f64,
    pub min_delta: f64,
    pub monitor: Monitor,
}

impl ReduceLrOnPlateau {
    pub fn new(patience: usize, factor: f64, min_lr: f64, min_delta: f64) -> Self {
        Self {
            patience,
            factor,
            min_lr,
            min_delta,
            monitor: Monitor::new(),
        }
    }

    /// Learning rate to use from the next epoch on.
    pub fn update(&mut self, epoch: usize, val_loss: f64, lr: f64) -> f64 {
        self.monitor.observe(epoch, val_loss, self.min_delta);
        if self.monitor.wait >= self.patience {
            self.monitor.wait = 0;
            (lr * self.factor).max(self.min_lr)
        } else {
            lr
        }
    }
}

/// Replays a history through [`ReduceLrOnPlateau`] and returns the final lr.
pub fn reduce_lr_on_plateau(
    val_losses: &[f64],
    lr: f64,
    patience: usize,
    factor: f64,
    min_lr: f64,
) -> f64 {
    let mut cb = ReduceLrOnPlateau::new(patience, factor, min_lr, 0.0);
    val_losses
        .iter()
        .enumerate()
        .fold(lr, |lr, (i, &l)| cb.update(i + 1, l, lr))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stops_after_patience_without_improvement() {
        assert_eq!(
            early_stopping(&[1.0, 0.9, 0.91, 0.92], 2, 0.0),
            Decision::Stop { best_epoch: 2 }
        );
        assert_eq!(early_stopping(&[1.0, 0.9, 0.91], 2, 0.0), Decision::Continue);
        let decreasing: Vec<f64> = (0..100).map(|i| 1.0 / (i + 1) as f64).collect();
        assert_eq!(early_stopping(&decreasing, 1, 0.0), Decision::Continue);
        assert_eq!(
            early_stopping(&[0.5, 0.5, 0.5], 2, 0.0),
            Decision::Stop { best_epoch: 1 }
        );
    }

    #[test]
    fn plateau_reduces_and_floors() {
        assert!((reduce_lr_on_plateau(&[1.0, 1.0], 1e-4, 1, 0.1, 1e-7) - 1e-5).abs() < 1e-18);
        assert_eq!(reduce_lr_on_plateau(&[1.0, 1.0, 1.0], 1e-7, 1, 0.1, 1e-7), 1e-7);
        assert_eq!(reduce_lr_on_plateau(&[1.0, 2.0, 0.5, 0.6], 1e-4, 2, 0.1, 1e-7), 1e-4);
        // counter resets after a reduction
        let mut cb = ReduceLrOnPlateau::new(2, 0.1, 0.0, 0.0);
        let lrs: Vec<f64> = [1.0, 1.0, 1.0, 1.0, 1.0]
            .iter()
            .enumerate()
            .scan(1.0, |lr, (i, &l)| {
                *lr = cb.update(i + 1, l, *lr);
                Some(*lr)
            })
            .collect();
        assert_eq!(lrs, vec![1.0, 1.0, 0.1, 0.1, 0.1 * 0.1]);
    }
}
