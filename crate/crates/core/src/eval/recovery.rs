//! Train on corrupted labels, then score the model against the clean oracles.

use std::fmt::Write as _;
use std::path::Path;

use crate::data::{
    dropped_components, injected_components, split_dataset, synth_dataset,
    tile_scene, write_png, Mask, Raster, SceneSample, SynthConfig,
};
use crate::error::{Error, Result};
use crate::tensor::Rng;
use crate::train::{Example, TrainConfig, TrainHistory, Trainer};
use crate::unet::{UNetConfig, UNetModel};

use super::metrics::{compute_metrics, MetricsReport};
use super::mosaic::{predict_scene, ProbMap};

/// A dropped component counts as recovered when its IoU with the predicted
/// components touching it reaches this value.
pub const RECOVERY_IOU: f64 = 0.3;
/// An injected component counts as rejected when its mean probability is below this.
pub const REJECT_BELOW: f64 = 0.5;

#[derive(Clone, Debug, PartialEq)]
pub struct RecoveryConfig {
    pub synth: SynthConfig,
    pub model: UNetConfig,
    pub train: TrainConfig,
    pub tile: usize,
    pub stride: usize,
    /// 0 trains on every scene without a validation split.
    pub val_fraction: f64,
    pub tau: f64,
}

impl Default for RecoveryConfig {
    fn default() -> Self {
        Self {
            synth: SynthConfig {
                n_scenes: 64,
                label_drop_fraction: 0.3,
                false_label_count: 2,
                ..SynthConfig::default()
            },
            model: UNetConfig {
                depth: 3,
                base_width: 8,
                ..UNetConfig::default()
            },
            train: TrainConfig {
                epochs: 60,
                ..TrainConfig::default()
            },
            tile: 128,
            stride: 128,
            val_fraction: 0.0,
            tau: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneRecovery {
    pub scene_id: String,
    /// Thresholded prediction against the oracle.
    pub model: MetricsReport,
    /// Training labels against the oracle.
    pub noisy: MetricsReport,
    pub dropped: usize,
    pub dropped_recovered: usize,
    pub injected: usize,
    pub injected_rejected: usize,
    pub river_pixels: usize,
    pub river_false_positives: usize,
    pub cloud_pixels: usize,
    pub cloud_false_positives: usize,
}

impl SceneRecovery {
    pub fn dropped_recall(&self) -> Option<f64> {
        fraction(self.dropped_recovered, self.dropped)
    }

    pub fn rejection_rate(&self) -> Option<f64> {
        fraction(self.injected_rejected, self.injected)
    }
}

fn fraction(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RecoveryReport {
    pub scenes: Vec<SceneRecovery>,
    pub history: TrainHistory,
}

impl RecoveryReport {
    fn pooled(&self, pick: impl Fn(&SceneRecovery) -> MetricsReport) -> MetricsReport {
        self.scenes
            .iter()
            .map(pick)
            .fold(MetricsReport::from_counts(0, 0, 0, 0), |a, b| a.merge(&b))
    }

    fn total(&self, pick: impl Fn(&SceneRecovery) -> usize) -> usize {
        self.scenes.iter().map(pick).sum()
    }

    /// IoU of the model against the oracle, pixels pooled over scenes.
    pub fn model_iou(&self) -> f64 {
        self.pooled(|s| s.model).iou
    }

    pub fn noisy_iou(&self) -> f64 {
        self.pooled(|s| s.noisy).iou
    }

    pub fn mean_scene_model_iou(&self) -> f64 {
        self.scenes.iter().map(|s| s.model.iou).sum::<f64>() / self.scenes.len() as f64
    }

    pub fn mean_scene_noisy_iou(&self) -> f64 {
        self.scenes.iter().map(|s| s.noisy.iou).sum::<f64>() / self.scenes.len() as f64
    }

    /// Recovered over all dropped components; `None` when nothing was dropped.
    pub fn dropped_recall(&self) -> Option<f64> {
        fraction(self.total(|s| s.dropped_recovered), self.total(|s| s.dropped))
    }

    pub fn rejection_rate(&self) -> Option<f64> {
        fraction(self.total(|s| s.injected_rejected), self.total(|s| s.injected))
    }

    /// Fraction of river pixels predicted as scar; `None` without rivers.
    pub fn river_fp_rate(&self) -> Option<f64> {
        fraction(self.total(|s| s.river_false_positives), self.total(|s| s.river_pixels))
    }

    pub fn cloud_fp_rate(&self) -> Option<f64> {
        fraction(self.total(|s| s.cloud_false_positives), self.total(|s| s.cloud_pixels))
    }

    pub fn to_key_values(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(|| "na".to_string(), |v| v.to_string());
        let mut out = String::new();
        let _ = writeln!(out, "scenes={}", self.scenes.len());
        let _ = writeln!(out, "model_iou={}", self.model_iou());
        let _ = writeln!(out, "noisy_iou={}", self.noisy_iou());
        let _ = writeln!(out, "dropped_components={}", self.total(|s| s.dropped));
        let _ = writeln!(out, "dropped_recall={}", opt(self.dropped_recall()));
        let _ = writeln!(out, "injected_components={}", self.total(|s| s.injected));
        let _ = writeln!(out, "rejection_rate={}", opt(self.rejection_rate()));
        let _ = writeln!(out, "river_fp_rate={}", opt(self.river_fp_rate()));
        let _ = writeln!(out, "cloud_fp_rate={}", opt(self.cloud_fp_rate()));
        out
    }

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(String::new, |v| v.to_string());
        let mut out = String::from(
            "scene_id,model_iou,noisy_iou,dropped,dropped_recall,injected,rejection_rate,river_fp,cloud_fp\n",
        );
        for s in &self.scenes {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                s.scene_id,
                s.model.iou,
                s.noisy.iou,
                s.dropped,
                opt(s.dropped_recall()),
                s.injected,
                opt(s.rejection_rate()),
                opt(fraction(s.river_false_positives, s.river_pixels)),
                opt(fraction(s.cloud_false_positives, s.cloud_pixels)),
            );
        }
        out
    }
}

/// Scores one scene's prediction against its oracle.
pub fn score_scene(sample: &SceneSample, prob: &ProbMap, tau: f64) -> Result<SceneRecovery> {
    let oracle = sample
        .oracle
        .as_ref()
        .ok_or_else(|| Error::contract(format!("scene {} has no oracle mask", sample.scene_id)))?;
    let pred = prob.threshold(tau)?;

    let (pred_labels, _) = crate::data::connected_components(&pred);
    let dropped = dropped_components(sample);
    let mut dropped_recovered = 0;
    for comp in &dropped {
        // union of predicted components touching this one
        let mut touching: Vec<u32> = comp
            .iter()
            .map(|&p| pred_labels[p])
            .filter(|&l| l > 0)
            .collect();
        touching.sort_unstable();
        touching.dedup();
        let union: usize = pred_labels
            .iter()
            .filter(|l| touching.binary_search(l).is_ok())
            .count();
        let inter = comp.iter().filter(|&&p| pred.data[p] == 1).count();
        let iou = inter as f64 / (comp.len() + union - inter) as f64;
        if iou >= RECOVERY_IOU {
            dropped_recovered += 1;
        }
    }

    let injected = injected_components(sample);
    let injected_rejected = injected
        .iter()
        .filter(|c| {
            let mean = c.iter().map(|&p| f64::from(prob.data[p])).sum::<f64>() / c.len() as f64;
            mean < REJECT_BELOW
        })
        .count();

    let confuser = |m: Option<&Mask>| -> (usize, usize) {
        m.map_or((0, 0), |m| {
            let px = m.data.iter().filter(|&&v| v == 1).count();
            let fp = m
                .data
                .iter()
                .zip(&pred.data)
                .filter(|(&c, &p)| c == 1 && p == 1)
                .count();
            (px, fp)
        })
    };
    let (river_pixels, river_false_positives) = confuser(sample.confusers.as_ref().map(|c| &c.river));
    let (cloud_pixels, cloud_false_positives) = confuser(sample.confusers.as_ref().map(|c| &c.cloud));

    Ok(SceneRecovery {
        scene_id: sample.scene_id.clone(),
        model: compute_metrics(&pred, oracle)?,
        noisy: compute_metrics(&sample.labels, oracle)?,
        dropped: dropped.len(),
        dropped_recovered,
        injected: injected.len(),
        injected_rejected,
        river_pixels,
        river_false_positives,
        cloud_pixels,
        cloud_false_positives,
    })
}

/// Side-by-side RGB panel: vis | nir | noisy labels | probability | binary map.
pub fn panel(sample: &SceneSample, prob: &ProbMap, tau: f64) -> Result<Raster> {
    const GAP: usize = 2;
    let (h, w) = (sample.height(), sample.width());
    let total_w = 5 * w + 4 * GAP;
    let mut out = Raster::new(h, total_w, 3, 8)?;
    out.data.fill(255);
    let nir_scale = f64::from(sample.nir.max_value());
    let binary = prob.threshold(tau)?;
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            let nir = (f64::from(sample.nir.get(r, c, 0)) / nir_scale * 255.0).round() as u16;
            let prob8 = (f64::from(prob.data[i]) * 255.0).round() as u16;
            let gray = [
                None,
                Some(nir),
                Some(u16::from(sample.labels.data[i]) * 255),
                Some(prob8),
                Some(u16::from(binary.data[i]) * 255),
            ];
            for (k, g) in gray.iter().enumerate() {
                let col = k * (w + GAP) + c;
                for ch in 0..3 {
                    let v = g.unwrap_or_else(|| sample.vis.get(r, c, ch));
                    out.set(r, col, ch, v);
                }
            }
        }
    }
    Ok(out)
}

/// Runs the experiment on freshly generated synthetic scenes.
pub fn recovery_experiment(cfg: &RecoveryConfig, out: Option<&Path>) -> Result<RecoveryReport> {
    let scenes = synth_dataset(&cfg.synth)?;
    recovery_on_scenes(&scenes, cfg, out)
}

/// Trains on the scenes' (noisy) labels and scores every scene against its
/// oracle. With `out`, writes `recovery.txt`, `recovery.csv`, `history.csv`
/// and `panels/<scene_id>.png`.
pub fn recovery_on_scenes(
    scenes: &[SceneSample],
    cfg: &RecoveryConfig,
    out: Option<&Path>,
) -> Result<RecoveryReport> {
    if let Some(s) = scenes.iter().find(|s| s.oracle.is_none()) {
        return Err(Error::contract(format!("scene {} has no oracle mask", s.scene_id)));
    }
    let examples = |set: &[SceneSample]| -> Result<Vec<Example>> {
        let mut v = Vec::new();
        for s in set {
            v.extend(tile_scene(s, cfg.tile, cfg.tile)?.iter().map(|t| t.example()));
        }
        Ok(v)
    };
    let (train_set, val_set) = if cfg.val_fraction > 0.0 {
        split_dataset(scenes.to_vec(), cfg.val_fraction, cfg.train.seed)?
    } else {
        (scenes.to_vec(), Vec::new())
    };
    let train = examples(&train_set)?;
    let val = examples(&val_set)?;

    let model = UNetModel::<f32>::build(cfg.model.clone(), &Rng::new(cfg.train.seed))?;
    let mut trainer = Trainer::new(model, cfg.train.clone())?;
    trainer.fit(&train, (!val.is_empty()).then_some(val.as_slice()))?;

    let mut results = Vec::with_capacity(scenes.len());
    for s in scenes {
        let prob = predict_scene(&trainer.model, s, cfg.tile, cfg.stride)?;
        results.push(score_scene(s, &prob, cfg.tau)?);
        if let Some(dir) = out {
            let panels = dir.join("panels");
            std::fs::create_dir_all(&panels).map_err(|e| Error::io(&panels, e))?;
            write_png(&panels.join(format!("{}.png", s.scene_id)), &panel(s, &prob, cfg.tau)?)?;
        }
    }
    let report = RecoveryReport {
        scenes: results,
        history: trainer.history.clone(),
    };
    if let Some(dir) = out {
        let write = |name: &str, text: String| {
            let p = dir.join(name);
            std::fs::write(&p, text).map_err(|e| Error::io(&p, e))
        };
        write("recovery.txt", report.to_key_values())?;
        write("recovery.csv", report.to_csv())?;
        write("history.csv", report.history.to_csv())?;
    }
    Ok(report)
}
