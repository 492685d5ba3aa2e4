//! Thresholding, metrics, mosaic inference and the noisy-label recovery experiment.

mod metrics;
mod mosaic;
mod recovery;

pub use metrics::{compute_metrics, threshold, threshold_mask, MetricsReport};
pub use mosaic::{predict_scene, ProbMap};
pub use recovery::{
    panel, recovery_experiment, recovery_on_scenes, score_scene, RecoveryConfig, RecoveryReport,
    SceneRecovery, RECOVERY_IOU, REJECT_BELOW,
};
