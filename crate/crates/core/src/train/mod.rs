//! Loss, optimizer, callbacks, epoch loop and checkpoint persistence.

mod adam;
mod callbacks;
pub mod checkpoint;
mod config;
mod history;
mod loss;
mod trainer;

pub use adam::{AdamParams, AdamState};
pub use callbacks::{early_stopping, reduce_lr_on_plateau, Decision, EarlyStopping, Monitor, ReduceLrOnPlateau};
pub use checkpoint::Checkpoint;
pub use config::TrainConfig;
pub use history::{EpochRecord, TrainHistory};
pub use loss::{bce_loss, PROB_CLAMP};
pub use trainer::{
    batch_indices, evaluate, CallbackEvent, EpochStats, Example, FitOutcome, Phase, Trainer,
    BEST_FILE, LAST_FILE,
};
