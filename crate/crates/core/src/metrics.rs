//! Confusion counts and the four segmentation scores.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{shape_str, Scalar, Tensor};

/// Pixel counts and the metrics derived from them.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
    pub iou: f64,
}

/// How per-frame reports are combined.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    /// Metrics of the summed counts.
    #[default]
    Micro,
    /// Mean of per-frame metrics.
    Macro,
}

impl std::str::FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "micro" => Ok(Self::Micro),
            "macro" => Ok(Self::Macro),
            _ => Err(Error::arg(format!("unknown aggregation '{s}' (micro|macro)"))),
        }
    }
}

/// `tp / (tp + other)`, scoring 1 when there is nothing to find and nothing
/// missed, 0 otherwise.
fn ratio(tp: u64, other: u64, missed: u64) -> f64 {
    match tp + other {
        0 if missed == 0 => 1.0,
        0 => 0.0,
        d => tp as f64 / d as f64,
    }
}

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn f_measure(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

impl MetricsReport {
    pub fn from_counts(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        let precision = ratio(tp, fp, fn_);
        let recall = ratio(tp, fn_, fp);
        let iou = match tp + fp + fn_ {
            0 => 1.0,
            d => tp as f64 / d as f64,
        };
        Self {
            tp,
            fp,
            fn_,
            tn,
            precision,
            recall,
            f_measure: f_measure(precision, recall),
            iou,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

fn squeeze(shape: &[usize]) -> &[usize] {
    let lead = shape.iter().take_while(|&&n| n == 1).count();
    &shape[lead.min(shape.len().saturating_sub(1))..]
}

/// Scores `pred > θ` against a binary mask. A leading singleton channel on
/// either side is ignored, so `1×h×w` maps score against `h×w` masks.
pub fn score<S: Scalar>(pred: &Tensor<S>, gt: &Tensor<S>, theta: f64) -> Result<MetricsReport> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(Error::arg(format!("threshold must lie in (0, 1), got {theta}")));
    }
    if squeeze(pred.shape()) != squeeze(gt.shape()) {
        return Err(Error::dim(format!(
            "score: prediction {} does not match mask {}",
            shape_str(pred.shape()),
            shape_str(gt.shape())
        )));
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for (p, g) in pred.data().iter().zip(gt.data()) {
        match (p.as_f64() > theta, g.as_f64() > 0.5) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    Ok(MetricsReport::from_counts(tp, fp, fn_, tn))
}

/// Combines per-frame reports; counts are always summed.
pub fn aggregate(reports: &[MetricsReport], mode: Aggregation) -> Result<MetricsReport> {
    if reports.is_empty() {
        return Err(Error::arg("aggregate: no reports"));
    }
    let sum = |f: fn(&MetricsReport) -> u64| reports.iter().map(f).sum::<u64>();
    let micro = MetricsReport::from_counts(sum(|r| r.tp), sum(|r| r.fp), sum(|r| r.fn_), sum(|r| r.tn));
    Ok(match mode {
        Aggregation::Micro => micro,
        Aggregation::Macro => {
            let n = reports.len() as f64;
            let mean = |f: fn(&MetricsReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
            MetricsReport {
                precision: mean(|r| r.precision),
                recall: mean(|r| r.recall),
                f_measure: mean(|r| r.f_measure),
                iou: mean(|r| r.iou),
                ..micro
            }
        }
    })
}
