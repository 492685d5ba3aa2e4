use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::error::{Error, Result};
use crate::nn::Mode;
use crate::tensor::{Rng, Stream, Tape, Tensor};
use crate::unet::UNetModel;

use super::adam::AdamState;
use super::callbacks::{Decision, EarlyStopping, Monitor, ReduceLrOnPlateau};
use super::checkpoint::Checkpoint;
use super::config::TrainConfig;
use super::history::{EpochRecord, TrainHistory};
use super::loss::bce_loss;

/// One training pair: input `[1, C, H, W]`, binary target `[1, 1, H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub input: Tensor<f32>,
    pub target: Tensor<f32>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    /// Pixel-weighted mean BCE.
    pub loss: f64,
    /// Fraction of pixels where `p >= 0.5` agrees with the target.
    pub accuracy: f64,
    pub steps: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Train,
    Val,
}

/// What happened at the end of an epoch, in execution order.
#[derive(Clone, Debug, PartialEq)]
pub enum CallbackEvent {
    Metrics { epoch: usize, monitored: f64 },
    Checkpoint { epoch: usize, best: bool },
    LrReduced { from: f64, to: f64 },
    EarlyStop { best_epoch: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitOutcome {
    pub epochs_run: usize,
    /// Set when early stopping fired; the best weights were restored.
    pub stopped_at_best: Option<usize>,
    pub events: Vec<CallbackEvent>,
}

pub const BEST_FILE: &str = "best.amzs";
pub const LAST_FILE: &str = "last.amzs";

/// Splits shuffled indices into batches of `size`; a trailing singleton is
/// folded into the previous batch because train-mode batchnorm may reject it.
pub fn batch_indices(order: &[usize], size: usize, merge_singleton: bool) -> Vec<Vec<usize>> {
    let mut batches: Vec<Vec<usize>> = order.chunks(size.max(1)).map(<[usize]>::to_vec).collect();
    if merge_singleton && batches.len() > 1 && batches.last().is_some_and(|b| b.len() == 1) {
        let last = batches.pop().unwrap();
        batches.last_mut().unwrap().extend(last);
    }
    batches
}

fn stack(data: &[Example], idx: &[usize]) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let xs: Vec<&Tensor<f32>> = idx.iter().map(|&i| &data[i].input).collect();
    let ys: Vec<&Tensor<f32>> = idx.iter().map(|&i| &data[i].target).collect();
    let x = Tensor::stack_batch(&xs).map_err(|e| Error::shape(format!("batch assembly: {e}")))?;
    let y = Tensor::stack_batch(&ys).map_err(|e| Error::shape(format!("batch assembly: {e}")))?;
    let (n, _, h, w) = x.dims4()?;
    if y.shape() != [n, 1, h, w] {
        return Err(Error::shape(format!(
            "batch assembly: targets {:?} do not match inputs {:?}",
            y.shape(),
            x.shape()
        )));
    }
    Ok((x, y))
}

fn correct_pixels(pred: &Tensor<f32>, target: &Tensor<f32>) -> usize {
    pred.data()
        .iter()
        .zip(target.data())
        .filter(|(p, y)| (**p >= 0.5) == (**y >= 0.5))
        .count()
}

/// Eval-mode loss and accuracy over `data` in batches of `batch`.
pub fn evaluate(model: &UNetModel<f32>, data: &[Example], batch: usize) -> Result<EpochStats> {
    if data.is_empty() {
        return Err(Error::contract("cannot evaluate an empty split"));
    }
    let order: Vec<usize> = (0..data.len()).collect();
    let (mut loss, mut correct, mut pixels) = (0.0, 0, 0);
    for idx in batch_indices(&order, batch, false) {
        let (x, y) = stack(data, &idx)?;
        let p = model.predict(&x)?;
        let mut tape = Tape::new();
        let pv = tape.constant(p.clone());
        let l = bce_loss(&mut tape, pv, &y)?;
        loss += f64::from(tape.value(l).item()?) * y.len() as f64;
        correct += correct_pixels(&p, &y);
        pixels += y.len();
    }
    Ok(EpochStats {
        loss: loss / pixels as f64,
        accuracy: correct as f64 / pixels as f64,
        steps: 0,
    })
}

/// Quantity watched by the callbacks: val loss, or train loss when there
/// is no validation split.
fn monitored(r: &EpochRecord) -> f64 {
    if r.val_loss.is_nan() {
        r.train_loss
    } else {
        r.val_loss
    }
}

/// Model, optimizer and callback state of one training run.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub model: UNetModel<f32>,
    pub config: TrainConfig,
    pub adam: AdamState<f32>,
    pub history: TrainHistory,
    lr: f64,
    dropout_rng: Rng,
    shuffle_rng: Rng,
    checkpoint_best: Monitor,
    plateau: ReduceLrOnPlateau,
    early: EarlyStopping,
    best_model: Option<UNetModel<f32>>,
    checkpoint_dir: Option<PathBuf>,
}

impl Trainer {
    pub fn new(model: UNetModel<f32>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let root = Rng::new(config.seed);
        let adam = AdamState::new(model.params())?;
        Ok(Self {
            lr: config.lr,
            dropout_rng: root.split(Stream::Dropout),
            shuffle_rng: root.split(Stream::Shuffle),
            checkpoint_best: Monitor::new(),
            plateau: ReduceLrOnPlateau::new(
                config.plateau_patience,
                config.plateau_factor,
                config.min_lr,
                config.min_delta,
            ),
            early: EarlyStopping::new(config.early_stop_patience, config.min_delta),
            best_model: None,
            checkpoint_dir: None,
            model,
            config,
            adam,
            history: TrainHistory::default(),
        })
    }

    /// Continues from a checkpoint. Callback state and the learning rate are
    /// rebuilt by replaying the stored history; the best weights come from
    /// `best.amzs` next to the checkpoint when present.
    pub fn resume(checkpoint: Checkpoint, config: TrainConfig) -> Result<Self> {
        let mut t = Self::new(checkpoint.model, config)?;
        t.adam = checkpoint.adam;
        t.dropout_rng = Rng::from_cursor(checkpoint.dropout_rng);
        t.shuffle_rng = Rng::from_cursor(checkpoint.shuffle_rng);
        for r in &checkpoint.history.records {
            let m = monitored(r);
            t.checkpoint_best_update(r.epoch, m);
            t.lr = t.plateau.update(r.epoch, m, t.lr);
            t.early.update(r.epoch, m);
        }
        t.history = checkpoint.history;
        Ok(t)
    }

    /// Writes `best.amzs` / `last.amzs` into `dir` at every epoch end.
    pub fn with_checkpoint_dir(mut self, dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let best = dir.join(BEST_FILE);
        if best.exists() && !self.history.is_empty() {
            self.best_model = Some(Checkpoint::load(&best)?.model);
        }
        self.checkpoint_dir = Some(dir);
        Ok(self)
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model: self.model.clone(),
            adam: self.adam.clone(),
            history: self.history.clone(),
            dropout_rng: self.dropout_rng.cursor(),
            shuffle_rng: self.shuffle_rng.cursor(),
        }
    }

    fn checkpoint_best_update(&mut self, epoch: usize, monitored: f64) -> bool {
        let m = &mut self.checkpoint_best;
        let improved = m.best.is_none_or(|b| monitored < b);
        if improved {
            m.best = Some(monitored);
            m.best_epoch = epoch;
        }
        improved
    }

    /// One optimization step on a stacked batch; returns (loss, correct pixels).
    fn step(&mut self, x: Tensor<f32>, y: &Tensor<f32>) -> Result<(f64, usize)> {
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let out = self.model.forward(&mut tape, xv, &mut self.dropout_rng)?.output;
        let l = bce_loss(&mut tape, out, y)?;
        let loss = f64::from(tape.value(l).item()?);
        let correct = correct_pixels(tape.value(out), y);
        self.model.params_mut().zero_grad();
        tape.backward_into(l, self.model.params_mut())?;
        self.adam.step(self.model.params_mut(), self.config.adam(), self.lr)?;
        Ok((loss, correct))
    }

    /// Train phase shuffles with the shuffle stream and steps Adam per
    /// batch; val phase is an eval-mode pass.
    pub fn run_epoch(&mut self, data: &[Example], phase: Phase) -> Result<EpochStats> {
        if data.is_empty() {
            return Err(Error::contract("cannot run an epoch on an empty split"));
        }
        if phase == Phase::Val {
            return evaluate(&self.model, data, self.config.batch_val);
        }
        self.model.set_mode(Mode::Train);
        let mut order: Vec<usize> = (0..data.len()).collect();
        self.shuffle_rng.shuffle(&mut order);
        let (mut loss, mut correct, mut pixels, mut steps) = (0.0, 0, 0, 0);
        for idx in batch_indices(&order, self.config.batch_train, true) {
            let (x, y) = stack(data, &idx)?;
            let (l, c) = self.step(x, &y)?;
            loss += l * y.len() as f64;
            correct += c;
            pixels += y.len();
            steps += 1;
        }
        self.model.set_mode(Mode::Eval);
        Ok(EpochStats {
            loss: loss / pixels as f64,
            accuracy: correct as f64 / pixels as f64,
            steps,
        })
    }

    /// Trains until `config.epochs` records exist or early stopping fires.
    /// Without a validation split the callbacks monitor the training loss
    /// and the val columns are NaN.
    pub fn fit(&mut self, train: &[Example], val: Option<&[Example]>) -> Result<FitOutcome> {
        let mut outcome = FitOutcome {
            epochs_run: 0,
            stopped_at_best: None,
            events: Vec::new(),
        };
        while self.history.len() < self.config.epochs {
            let epoch = self.history.len() + 1;
            let start = Instant::now();
            let lr = self.lr;
            let tr = self.run_epoch(train, Phase::Train)?;
            let va = match val {
                Some(v) => Some(self.run_epoch(v, Phase::Val)?),
                None => None,
            };
            let record = EpochRecord {
                epoch,
                train_loss: tr.loss,
                val_loss: va.map_or(f64::NAN, |s| s.loss),
                train_acc: tr.accuracy,
                val_acc: va.map_or(f64::NAN, |s| s.accuracy),
                lr,
                wall_time: start.elapsed().as_secs_f64(),
            };
            self.history.push(record)?;
            outcome.epochs_run += 1;
            let events = self.end_of_epoch(epoch, monitored(&record))?;
            let stop = events.iter().find_map(|e| match e {
                CallbackEvent::EarlyStop { best_epoch } => Some(*best_epoch),
                _ => None,
            });
            outcome.events.extend(events);
            if let Some(best_epoch) = stop {
                if let Some(best) = self.best_model.take() {
                    self.model = best;
                }
                outcome.stopped_at_best = Some(best_epoch);
                break;
            }
        }
        Ok(outcome)
    }

    /// Callback chain: metrics, checkpoint, plateau, early stop.
    fn end_of_epoch(&mut self, epoch: usize, monitored: f64) -> Result<Vec<CallbackEvent>> {
        let mut events = vec![CallbackEvent::Metrics { epoch, monitored }];

        let best = self.checkpoint_best_update(epoch, monitored);
        if best {
            self.best_model = Some(self.model.clone());
        }
        if let Some(dir) = self.checkpoint_dir.clone() {
            let ck = self.checkpoint();
            if best {
                ck.save(&dir.join(BEST_FILE))?;
            }
            ck.save(&dir.join(LAST_FILE))?;
        }
        events.push(CallbackEvent::Checkpoint { epoch, best });

        let new_lr = self.plateau.update(epoch, monitored, self.lr);
        if new_lr != self.lr {
            events.push(CallbackEvent::LrReduced {
                from: self.lr,
                to: new_lr,
            });
            self.lr = new_lr;
        }

        if let Decision::Stop { best_epoch } = self.early.update(epoch, monitored) {
            events.push(CallbackEvent::EarlyStop { best_epoch });
        }
        Ok(events)
    }

    pub fn checkpoint_dir(&self) -> Option<&Path> {
        self.checkpoint_dir.as_deref()
    }
}
