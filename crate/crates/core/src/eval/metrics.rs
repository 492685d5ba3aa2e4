use crate::data::Mask;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// 1 where `prob >= tau`, else 0. `tau` must lie strictly inside (0, 1).
pub fn threshold(prob: &Tensor<f32>, tau: f64) -> Result<Tensor<f32>> {
    check_tau(tau)?;
    Ok(prob.map(|p| if f64::from(p) >= tau { 1.0 } else { 0.0 }))
}

pub(crate) fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau < 1.0 {
        Ok(())
    } else {
        Err(Error::config(format!("threshold tau must lie in (0, 1), got {tau}")))
    }
}

/// Thresholds an `H x W` probability raster into a mask.
pub fn threshold_mask(prob: &[f32], height: usize, width: usize, tau: f64) -> Result<Mask> {
    check_tau(tau)?;
    Mask::from_vec(
        height,
        width,
        prob.iter().map(|&p| u8::from(f64::from(p) >= tau)).collect(),
    )
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MetricsReport {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
    pub pixel_accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub iou: f64,
}

impl MetricsReport {
    /// Derived fractions from confusion counts. Empty-vs-empty gives 1 for
    /// iou, precision, recall and f1; otherwise a 0/0 ratio is 0.
    pub fn from_counts(tp: u64, fp: u64, tn: u64, fn_: u64) -> Self {
        let ratio = |num: u64, den: u64, empty: bool| {
            if den > 0 {
                num as f64 / den as f64
            } else if empty {
                1.0
            } else {
                0.0
            }
        };
        let both_empty = tp + fp + fn_ == 0;
        let precision = ratio(tp, tp + fp, both_empty);
        let recall = ratio(tp, tp + fn_, both_empty);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self {
            tp,
            fp,
            tn,
            fn_,
            pixel_accuracy: ratio(tp + tn, tp + fp + tn + fn_, true),
            precision,
            recall,
            f1,
            iou: ratio(tp, tp + fp + fn_, both_empty),
        }
    }

    /// Sums the counts of two reports and recomputes the fractions.
    pub fn merge(&self, other: &MetricsReport) -> MetricsReport {
        Self::from_counts(
            self.tp + other.tp,
            self.fp + other.fp,
            self.tn + other.tn,
            self.fn_ + other.fn_,
        )
    }

    /// `key=value` lines.
    pub fn to_key_values(&self) -> String {
        format!(
            "tp={}\nfp={}\ntn={}\nfn={}\npixel_accuracy={:?}\nprecision={:?}\nrecall={:?}\nf1={:?}\niou={:?}\n",
            self.tp,
            self.fp,
            self.tn,
            self.fn_,
            self.pixel_accuracy,
            self.precision,
            self.recall,
            self.f1,
            self.iou
        )
    }

    pub const CSV_HEADER: &'static str = "tp,fp,tn,fn,pixel_accuracy,precision,recall,f1,iou";

    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.tp,
            self.fp,
            self.tn,
            self.fn_,
            self.pixel_accuracy,
            self.precision,
            self.recall,
            self.f1,
            self.iou
        )
    }
}

/// Confusion counts of `pred` against `reference`.
pub fn compute_metrics(pred: &Mask, reference: &Mask) -> Result<MetricsReport> {
    if (pred.height, pred.width) != (reference.height, reference.width) {
        return Err(Error::shape(format!(
            "prediction is {}x{}, reference is {}x{}",
            pred.height, pred.width, reference.height, reference.width
        )));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&p, &r) in pred.data.iter().zip(&reference.data) {
        if p > 1 || r > 1 {
            return Err(Error::contract("metrics need binary masks"));
        }
        match (p, r) {
            (1, 1) => tp += 1,
            (1, 0) => fp += 1,
            (0, 0) => tn += 1,
            _ => fn_ += 1,
        }
    }
    Ok(MetricsReport::from_counts(tp, fp, tn, fn_))
}
