//! Fixed-threshold pseudo-label selection and calibration diagnostics.

use serde::{Deserialize, Serialize};

use crate::error::{CovarError, Result};
use crate::stats::{argmax, ProbabilityBatch};
use crate::summation;

/// Threshold used by the confidence-threshold baseline unless overridden.
pub const DEFAULT_TAU: f64 = 0.95;
pub const DEFAULT_BINS: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPolicy {
    tau: f64,
}

impl ThresholdPolicy {
    /// `tau` in `[0, 1]`; zero keeps every sample.
    pub fn new(tau: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&tau) {
            return Err(CovarError::domain(format!("threshold {tau} outside [0, 1]")));
        }
        Ok(Self { tau })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThresholdSelection {
    /// Argmax class for selected samples, `None` for ignored ones.
    pub pseudo_labels: Vec<Option<usize>>,
    pub mask: Vec<bool>,
}

impl ThresholdSelection {
    pub fn selected(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn selection_rate(&self) -> f64 {
        self.selected() as f64 / self.mask.len() as f64
    }
}

/// Keeps samples whose maximum confidence is at least `tau` (inclusive).
pub fn threshold_select(batch: &ProbabilityBatch, policy: &ThresholdPolicy) -> ThresholdSelection {
    let (pseudo_labels, mask) = batch
        .rows()
        .map(|row| {
            let (k, p) = argmax(row);
            let keep = p >= policy.tau();
            (keep.then_some(k), keep)
        })
        .unzip();
    ThresholdSelection {
        pseudo_labels,
        mask,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    /// Mean confidence in the bin (0 when empty).
    pub mean_confidence: f64,
    /// Fraction correct in the bin (0 when empty).
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub n_bins: usize,
    pub bin_edges: Vec<f64>,
    pub bins: Vec<CalibrationBin>,
    pub ece: f64,
}

/// Bin index for equal-width bins with right-inclusive upper edges; 0 falls
/// into the first bin.
fn bin_index(confidence: f64, n_bins: usize) -> usize {
    let scaled = (confidence * n_bins as f64).ceil() as usize;
    scaled.saturating_sub(1).min(n_bins - 1)
}

/// Expected calibration error over equal-width confidence bins.
pub fn ece(confidences: &[f64], correct: &[bool], n_bins: usize) -> Result<CalibrationReport> {
    if confidences.is_empty() {
        return Err(CovarError::domain("ECE of an empty sample"));
    }
    if confidences.len() != correct.len() {
        return Err(CovarError::domain(format!(
            "{} confidences but {} correctness flags",
            confidences.len(),
            correct.len()
        )));
    }
    if n_bins == 0 {
        return Err(CovarError::domain("need at least one bin"));
    }
    if let Some(i) = confidences.iter().position(|c| !(0.0..=1.0).contains(c)) {
        return Err(CovarError::domain(format!(
            "confidence {} at index {i} outside [0, 1]",
            confidences[i]
        )));
    }

    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_bins];
    for (i, &c) in confidences.iter().enumerate() {
        members[bin_index(c, n_bins)].push(i);
    }
    let n = confidences.len() as f64;
    let bin_edges: Vec<f64> = (0..=n_bins).map(|b| b as f64 / n_bins as f64).collect();
    let mut gaps = summation::NeumaierSum::new();
    let bins = members
        .iter()
        .enumerate()
        .map(|(b, idx)| {
            let count = idx.len();
            let (mean_confidence, accuracy) = if count == 0 {
                (0.0, 0.0)
            } else {
                let confs: Vec<f64> = idx.iter().map(|&i| confidences[i]).collect();
                let hits = idx.iter().filter(|&&i| correct[i]).count();
                (summation::mean(&confs), hits as f64 / count as f64)
            };
            gaps += count as f64 / n * (accuracy - mean_confidence).abs();
            CalibrationBin {
                lower: bin_edges[b],
                upper: bin_edges[b + 1],
                count,
                mean_confidence,
                accuracy,
            }
        })
        .collect();
    Ok(CalibrationReport {
        n_bins,
        bin_edges,
        bins,
        ece: gaps.value(),
    })
}

/// Maximum confidences and argmax-vs-label correctness of a labelled batch.
pub fn confidence_and_correctness(
    batch: &ProbabilityBatch,
    labels: &[usize],
) -> Result<(Vec<f64>, Vec<bool>)> {
    check_labels(batch, labels)?;
    Ok(batch
        .rows()
        .zip(labels)
        .map(|(row, &y)| {
            let (k, p) = argmax(row);
            (p, k == y)
        })
        .unzip())
}

fn check_labels(batch: &ProbabilityBatch, labels: &[usize]) -> Result<()> {
    if labels.len() != batch.n_samples() {
        return Err(CovarError::domain(format!(
            "{} labels for {} samples",
            labels.len(),
            batch.n_samples()
        )));
    }
    if let Some(i) = labels.iter().position(|&y| y >= batch.n_classes()) {
        return Err(CovarError::Validation {
            row: i,
            reason: format!("label {} out of range for K = {}", labels[i], batch.n_classes()),
        });
    }
    Ok(())
}

/// One point of the cumulative curve `P(correct | max p >= tau)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyCurvePoint {
    pub tau: f64,
    pub selection_rate: f64,
    /// `None` when nothing clears the threshold.
    pub accuracy: Option<f64>,
}

pub fn accuracy_curve(confidences: &[f64], correct: &[bool], taus: &[f64]) -> Vec<AccuracyCurvePoint> {
    let n = confidences.len() as f64;
    taus.iter()
        .map(|&tau| {
            let (kept, hits) = confidences
                .iter()
                .zip(correct)
                .filter(|(&c, _)| c >= tau)
                .fold((0usize, 0usize), |(k, h), (_, &ok)| (k + 1, h + usize::from(ok)));
            AccuracyCurvePoint {
                tau,
                selection_rate: kept as f64 / n,
                accuracy: (kept > 0).then(|| hits as f64 / kept as f64),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassRetention {
    pub class: usize,
    /// `N_k`, samples whose true label is `k`.
    pub count: usize,
    pub retained: usize,
    pub rate: f64,
    /// `1 / sqrt(N_k)`: the retention bound up to its unknown task constant.
    pub inv_sqrt_count: f64,
}

/// Per-class retention `r_k`; classes absent from the batch are `None`.
pub fn class_retention(
    batch: &ProbabilityBatch,
    true_labels: &[usize],
    policy: &ThresholdPolicy,
) -> Result<Vec<Option<ClassRetention>>> {
    let selection = threshold_select(batch, policy);
    retention_from_mask(batch.n_classes(), true_labels, &selection.mask)
}

pub(crate) fn retention_from_mask(
    n_classes: usize,
    true_labels: &[usize],
    mask: &[bool],
) -> Result<Vec<Option<ClassRetention>>> {
    if true_labels.len() != mask.len() {
        return Err(CovarError::domain("labels and mask differ in length"));
    }
    let mut counts = vec![0usize; n_classes];
    let mut retained = vec![0usize; n_classes];
    for (&y, &keep) in true_labels.iter().zip(mask) {
        if y >= n_classes {
            return Err(CovarError::domain(format!("label {y} out of range")));
        }
        counts[y] += 1;
        retained[y] += usize::from(keep);
    }
    Ok((0..n_classes)
        .map(|k| {
            (counts[k] > 0).then(|| ClassRetention {
                class: k,
                count: counts[k],
                retained: retained[k],
                rate: retained[k] as f64 / counts[k] as f64,
                inv_sqrt_count: 1.0 / (counts[k] as f64).sqrt(),
            })
        })
        .collect())
}
