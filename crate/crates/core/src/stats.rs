//! Per-sample confidence statistics and exact cross-entropy.
//!
//! For a predicted distribution `p` with argmax class `k'` the residual
//! classes are all `k != k'`. Their mean is `mu = (1 - p(k')) / (K - 1)`, the
//! deviations are `delta(k) = p(k) - mu` and the residual-class variance is
//! `v = sum(delta^2) / (K - 1)`.

use serde::{Deserialize, Serialize};

use crate::error::{CovarError, Result};
use crate::summation;

/// Rows whose sum is off by more than this are rejected.
pub const ROW_SUM_REJECT_TOL: f64 = 1e-6;
/// Rows whose sum is off by more than this (but within the reject tolerance)
/// are renormalised.
pub const ROW_SUM_EXACT_TOL: f64 = 1e-12;
/// Maximum confidence at or above `1 - DEGENERATE_GAP` marks a row degenerate.
pub const DEGENERATE_GAP: f64 = 1e-12;
/// Degenerate rows are clamped to a maximum confidence of `1 - CLAMP_GAP`.
pub const CLAMP_GAP: f64 = 1e-6;

/// An `N x K` row-stochastic matrix of predicted class distributions.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityBatch {
    n_samples: usize,
    n_classes: usize,
    values: Vec<f64>,
}

impl ProbabilityBatch {
    /// Validates a row-major buffer and renormalises rows whose sum drifts by
    /// at most [`ROW_SUM_REJECT_TOL`].
    pub fn new(n_classes: usize, mut values: Vec<f64>) -> Result<Self> {
        if n_classes < 2 {
            return Err(CovarError::domain(format!(
                "need at least 2 classes, got {n_classes}"
            )));
        }
        if values.is_empty() {
            return Err(CovarError::domain("batch has no samples"));
        }
        if !values.len().is_multiple_of(n_classes) {
            return Err(CovarError::domain(format!(
                "buffer of {} values is not a multiple of K = {n_classes}",
                values.len()
            )));
        }
        for (row, chunk) in values.chunks_mut(n_classes).enumerate() {
            normalize_row(row, chunk)?;
        }
        Ok(Self {
            n_samples: values.len() / n_classes,
            n_classes,
            values,
        })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let n_classes = rows
            .first()
            .map(|r| r.as_ref().len())
            .ok_or_else(|| CovarError::domain("batch has no samples"))?;
        let mut values = Vec::with_capacity(rows.len() * n_classes);
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != n_classes {
                return Err(CovarError::Validation {
                    row: i,
                    reason: format!("expected {n_classes} entries, found {}", row.len()),
                });
            }
            values.extend_from_slice(row);
        }
        Self::new(n_classes, values)
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_classes..(i + 1) * self.n_classes]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.values.chunks(self.n_classes)
    }

    /// Returns a batch with rows reordered so that row `i` is `self.row(order[i])`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        let mut values = Vec::with_capacity(self.values.len());
        for &i in order {
            values.extend_from_slice(self.row(i));
        }
        Self {
            n_samples: order.len(),
            n_classes: self.n_classes,
            values,
        }
    }
}

fn normalize_row(row: usize, chunk: &mut [f64]) -> Result<()> {
    for (k, &p) in chunk.iter().enumerate() {
        if !p.is_finite() {
            return Err(CovarError::Validation {
                row,
                reason: format!("class {k} is not finite ({p})"),
            });
        }
        if p < 0.0 {
            return Err(CovarError::Validation {
                row,
                reason: format!("class {k} is negative ({p})"),
            });
        }
    }
    let total = summation::sum(chunk.iter().copied());
    let drift = (total - 1.0).abs();
    if drift > ROW_SUM_REJECT_TOL {
        return Err(CovarError::Validation {
            row,
            reason: format!("row sums to {total}, expected 1"),
        });
    }
    if drift > ROW_SUM_EXACT_TOL {
        for p in chunk.iter_mut() {
            *p /= total;
        }
    }
    Ok(())
}

/// Confidence statistics of one predicted distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionStats {
    pub n_classes: usize,
    /// Argmax class `k'`; ties go to the lowest index.
    pub max_class: usize,
    /// Maximum confidence `p(k')`.
    pub max_conf: f64,
    /// Residual mean `mu = (1 - p(k')) / (K - 1)`.
    pub residual_mean: f64,
    /// Residual probabilities `p(k)` for `k != k'`, in class order.
    pub residuals: Vec<f64>,
    /// `delta(k) = p(k) - mu`, aligned with `residuals`.
    pub deviations: Vec<f64>,
    /// Residual-class variance `v`.
    pub rcv: f64,
    /// Residual-scale ratio `max |delta| / mu` (0 for degenerate rows).
    pub rho: f64,
    /// Maximum confidence reached `1 - 1e-12`.
    pub degenerate: bool,
    /// Set when the statistics were produced by [`PredictionStats::clamped`].
    pub clamped: bool,
}

impl PredictionStats {
    /// Statistics of a single (already validated) probability row.
    pub fn from_row(row: &[f64]) -> Self {
        let n_classes = row.len();
        assert!(n_classes >= 2, "need at least 2 classes");
        let (max_class, max_conf) = argmax(row);
        let residuals: Vec<f64> = row
            .iter()
            .enumerate()
            .filter(|&(k, _)| k != max_class)
            .map(|(_, &p)| p)
            .collect();
        let degenerate = max_conf >= 1.0 - DEGENERATE_GAP;
        Self::assemble(n_classes, max_class, max_conf, residuals, degenerate, false)
    }

    fn assemble(
        n_classes: usize,
        max_class: usize,
        max_conf: f64,
        residuals: Vec<f64>,
        degenerate: bool,
        clamped: bool,
    ) -> Self {
        let k1 = (n_classes - 1) as f64;
        let residual_mean = ((1.0 - max_conf) / k1).max(0.0);
        let deviations: Vec<f64> = residuals.iter().map(|&p| p - residual_mean).collect();
        let rcv = summation::sum(deviations.iter().map(|d| d * d)) / k1;
        let rho = if (degenerate && !clamped) || residual_mean <= 0.0 {
            0.0
        } else {
            deviations.iter().fold(0.0_f64, |m, d| m.max(d.abs())) / residual_mean
        };
        Self {
            n_classes,
            max_class,
            max_conf,
            residual_mean,
            residuals,
            deviations,
            rcv,
            rho,
            degenerate,
            clamped,
        }
    }

    /// Clamps a degenerate row to maximum confidence `1 - 1e-6`.
    ///
    /// The residual mass is rescaled to `1e-6` keeping its shape; a row with no
    /// residual mass at all receives uniform residuals. Non-degenerate rows are
    /// returned unchanged.
    pub fn clamped(&self) -> Self {
        if !self.degenerate || self.clamped {
            return self.clone();
        }
        let k1 = (self.n_classes - 1) as f64;
        let mass = summation::sum(self.residuals.iter().copied());
        let residuals: Vec<f64> = if mass > 0.0 {
            self.residuals.iter().map(|&p| CLAMP_GAP * (p / mass)).collect()
        } else {
            vec![CLAMP_GAP / k1; self.residuals.len()]
        };
        Self::assemble(
            self.n_classes,
            self.max_class,
            1.0 - CLAMP_GAP,
            residuals,
            true,
            true,
        )
    }

    /// Whether the statistics can feed formulas with `1 - p(k')` in a denominator.
    pub fn is_usable(&self) -> bool {
        !self.degenerate || self.clamped
    }

    /// Residual-scale assumption: `rho < 1` with positive residual mean.
    pub fn assumption_holds(&self) -> bool {
        self.is_usable() && self.residual_mean > 0.0 && self.rho < 1.0
    }

    /// The full distribution these statistics describe.
    pub fn distribution(&self) -> Vec<f64> {
        let mut row = Vec::with_capacity(self.n_classes);
        let mut residuals = self.residuals.iter();
        for k in 0..self.n_classes {
            if k == self.max_class {
                row.push(self.max_conf);
            } else {
                row.push(*residuals.next().expect("residual count"));
            }
        }
        row
    }
}

/// Argmax with ties broken towards the lowest index.
pub fn argmax(row: &[f64]) -> (usize, f64) {
    let mut best = (0, row[0]);
    for (k, &p) in row.iter().enumerate().skip(1) {
        if p > best.1 {
            best = (k, p);
        }
    }
    best
}

/// Statistics for every row of a batch, in row order.
pub fn compute_stats(batch: &ProbabilityBatch) -> Vec<PredictionStats> {
    batch.rows().map(PredictionStats::from_row).collect()
}

/// Ideal target distribution: `1 - (K-1) eps` on `max_class`, `eps` elsewhere.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdealDistribution {
    epsilon: f64,
    max_class: usize,
    n_classes: usize,
}

impl IdealDistribution {
    /// `epsilon` must lie in `[0, 1/(K-1))`; zero gives the one-hot target.
    pub fn new(epsilon: f64, max_class: usize, n_classes: usize) -> Result<Self> {
        if n_classes < 2 {
            return Err(CovarError::domain("ideal distribution needs K >= 2"));
        }
        if max_class >= n_classes {
            return Err(CovarError::domain(format!(
                "max class {max_class} out of range for K = {n_classes}"
            )));
        }
        let upper = 1.0 / (n_classes - 1) as f64;
        if !(epsilon >= 0.0 && epsilon < upper) {
            return Err(CovarError::domain(format!(
                "epsilon {epsilon} outside [0, {upper})"
            )));
        }
        Ok(Self {
            epsilon,
            max_class,
            n_classes,
        })
    }

    /// Adaptive target whose residual level equals the prediction's residual mean.
    pub fn adaptive(stats: &PredictionStats) -> Result<Self> {
        Self::new(stats.residual_mean, stats.max_class, stats.n_classes)
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn max_class(&self) -> usize {
        self.max_class
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn peak(&self) -> f64 {
        1.0 - (self.n_classes - 1) as f64 * self.epsilon
    }

    pub fn prob(&self, k: usize) -> f64 {
        if k == self.max_class {
            self.peak()
        } else {
            self.epsilon
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        (0..self.n_classes).map(|k| self.prob(k)).collect()
    }
}

/// Cross-entropy `-q(k') log p(k') - eps * sum_{k != k'} log p(k)`.
///
/// Classes carrying no target mass are skipped, so a one-hot target on a
/// one-hot prediction gives zero.
pub fn exact_ce(p: &[f64], q: &IdealDistribution) -> Result<f64> {
    if p.len() != q.n_classes() {
        return Err(CovarError::domain(format!(
            "distribution has {} classes, target has {}",
            p.len(),
            q.n_classes()
        )));
    }
    let peak = q.peak();
    let top = p[q.max_class()];
    let mut acc = summation::NeumaierSum::new();
    if peak > 0.0 {
        if top <= 0.0 {
            return Err(CovarError::InfiniteCrossEntropy {
                class: q.max_class(),
            });
        }
        acc += -peak * top.ln();
    }
    if q.epsilon() > 0.0 {
        for (k, &pk) in p.iter().enumerate() {
            if k == q.max_class() {
                continue;
            }
            if pk <= 0.0 {
                return Err(CovarError::InfiniteCrossEntropy { class: k });
            }
            acc += -q.epsilon() * pk.ln();
        }
    }
    Ok(acc.value())
}
