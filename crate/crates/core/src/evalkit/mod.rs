//! Classification and localization scoring.

mod components;

use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::volume::Dims3;

pub use components::{connected_components, dilate, Components};

/// Thresholds of the standard report grid, 0.1 to 0.9.
pub fn threshold_grid() -> Vec<f64> {
    (1..=9).map(|i| f64::from(i) / 10.0).collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub const fn new(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        Self { tp, fp, fn_, tn }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

impl core::ops::Add for ConfusionCounts {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.tp + o.tp, self.fp + o.fp, self.fn_ + o.fn_, self.tn + o.tn)
    }
}

impl core::ops::AddAssign for ConfusionCounts {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

/// One row of the threshold report. `None` marks a zero denominator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub threshold: f64,
    pub counts: ConfusionCounts,
    pub accuracy: Option<f64>,
    pub ppv: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub npv: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub p_abnormal: f64,
    pub abnormal: bool,
}

impl Prediction {
    pub fn new(p_abnormal: f64, abnormal: bool) -> Self {
        Self { p_abnormal, abnormal }
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Tallies predictions, calling a vessel abnormal when `p >= threshold`.
pub fn confusion_at(predictions: &[Prediction], threshold: f64) -> Result<ConfusionCounts> {
    if predictions.is_empty() {
        bail!(Data, "no predictions to score");
    }
    let mut c = ConfusionCounts::default();
    for p in predictions {
        if !(0.0..=1.0).contains(&p.p_abnormal) {
            bail!(Data, "probability {} outside [0, 1]", p.p_abnormal);
        }
        match (p.p_abnormal >= threshold, p.abnormal) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

pub fn metrics_from(counts: ConfusionCounts, threshold: f64) -> Result<MetricsRow> {
    let ConfusionCounts { tp, fp, fn_, tn } = counts;
    if counts.total() == 0 {
        bail!(Data, "all confusion counts are zero");
    }
    Ok(MetricsRow {
        threshold,
        counts,
        accuracy: ratio(tp + tn, tp + fp + fn_ + tn),
        ppv: ratio(tp, tp + fp),
        sensitivity: ratio(tp, tp + fn_),
        specificity: ratio(tn, tn + fp),
        npv: ratio(tn, tn + fn_),
    })
}

/// `2TP / (2TP + FP + FN)`.
pub fn dice(counts: ConfusionCounts) -> Option<f64> {
    ratio(2 * counts.tp, 2 * counts.tp + counts.fp + counts.fn_)
}

/// Metrics at each threshold of `thresholds`.
pub fn threshold_sweep(predictions: &[Prediction], thresholds: &[f64]) -> Result<Vec<MetricsRow>> {
    thresholds
        .iter()
        .map(|&t| metrics_from(confusion_at(predictions, t)?, t))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Decision threshold reaching this point; `+inf` for the origin.
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

/// ROC curve over every distinct score, integrated by the trapezoid rule.
/// Tied scores move the curve diagonally, which counts each tied
/// positive/negative pair as one half.
pub fn roc_auc(predictions: &[Prediction]) -> Result<RocCurve> {
    let pos = predictions.iter().filter(|p| p.abnormal).count() as u64;
    let neg = predictions.len() as u64 - pos;
    if pos == 0 || neg == 0 {
        bail!(Data, "ROC needs both classes, got {} abnormal and {} normal", pos, neg);
    }
    if let Some(p) = predictions.iter().find(|p| !p.p_abnormal.is_finite()) {
        bail!(Data, "non-finite score {}", p.p_abnormal);
    }
    let mut sorted: Vec<&Prediction> = predictions.iter().collect();
    sorted.sort_by(|a, b| b.p_abnormal.total_cmp(&a.p_abnormal));

    let mut points = Vec::with_capacity(sorted.len() + 1);
    points.push(RocPoint { fpr: 0.0, tpr: 0.0, threshold: f64::INFINITY });
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut twice_area: u128 = 0;
    let mut i = 0;
    while i < sorted.len() {
        let t = sorted[i].p_abnormal;
        let (tp0, fp0) = (tp, fp);
        while i < sorted.len() && sorted[i].p_abnormal == t {
            if sorted[i].abnormal { tp += 1 } else { fp += 1 }
            i += 1;
        }
        // Exact integer trapezoid, scaled by 2 * pos * neg.
        twice_area += u128::from(fp - fp0) * u128::from(tp + tp0);
        points.push(RocPoint { fpr: fp as f64 / neg as f64, tpr: tp as f64 / pos as f64, threshold: t });
    }
    let auc = twice_area as f64 / (2.0 * pos as f64 * neg as f64);
    Ok(RocCurve { points, auc })
}

/// Mean and sample standard deviation. `sd` is `None` for fewer than two values.
pub fn mean_sd(values: &[f64]) -> Option<(f64, Option<f64>)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = (values.len() > 1).then(|| {
        let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
        num_traits::Float::sqrt(ss / (n - 1.0))
    });
    Some((mean, sd))
}

fn check_dims(dims: Dims3, a: &[bool], b: &[bool]) -> Result<()> {
    if a.len() != dims.len() || b.len() != dims.len() {
        bail!(Shape, "mask sizes {} and {} do not match dims {}", a.len(), b.len(), dims);
    }
    Ok(())
}

/// Voxelwise tally of a saliency mask against an annotation mask.
pub fn pixel_overlap(dims: Dims3, saliency: &[bool], annotation: &[bool]) -> Result<ConfusionCounts> {
    check_dims(dims, saliency, annotation)?;
    let mut c = ConfusionCounts::default();
    for (&s, &a) in saliency.iter().zip(annotation) {
        match (s, a) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

/// Component-level tally. Each annotation component touched by saliency is a
/// TP, each untouched one an FN, and each saliency component touching no
/// annotation an FP. TN has no region-level definition and is left at 0.
pub fn region_overlap(dims: Dims3, saliency: &[bool], annotation: &[bool]) -> Result<ConfusionCounts> {
    check_dims(dims, saliency, annotation)?;
    let sal = connected_components(dims, saliency)?;
    let ann = connected_components(dims, annotation)?;
    let mut ann_hit = alloc::vec![false; ann.count];
    let mut sal_hit = alloc::vec![false; sal.count];
    for (ls, la) in sal.labels.iter().zip(&ann.labels) {
        if let (Some(s), Some(a)) = (ls, la) {
            ann_hit[*a as usize] = true;
            sal_hit[*s as usize] = true;
        }
    }
    let tp = ann_hit.iter().filter(|&&h| h).count() as u64;
    let fp = sal_hit.iter().filter(|&&h| !h).count() as u64;
    Ok(ConfusionCounts::new(tp, fp, ann.count as u64 - tp, 0))
}
