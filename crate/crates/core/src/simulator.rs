//! Seeded synthetic classifier outputs with controllable miscalibration.
//!
//! Each sample draws a true label from the class priors and a confidence `c`
//! whose mean tracks the class's accuracy. The prediction is correct with
//! probability `c`, so at temperature 1 the generator is calibrated in
//! expectation. Residual mass `1 - c` is either spread evenly (low RCV) or
//! concentrated on one competitor class (high RCV). Rows are then sharpened
//! by `p^(1/T)` renormalisation, which leaves accuracy unchanged and raises
//! confidence when `T < 1`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand::distr::weighted::WeightedIndex;
use rand_distr::{Beta, Distribution, Gamma, Uniform};
use serde::{Deserialize, Serialize};

use crate::baseline::{self, ClassRetention, ThresholdPolicy, DEFAULT_BINS};
use crate::error::{CovarError, Result};
use crate::pcos::{self, PcosConfig};
use crate::stats::{argmax, ProbabilityBatch};
use crate::summation;

/// Concentration of the confidence draw around its class mean.
const CONFIDENCE_CONCENTRATION: f64 = 4.0;
/// Per-class Dirichlet concentration of residual shares.
const RESIDUAL_CONCENTRATION: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ResidualMode {
    #[default]
    Uniform,
    Bimodal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorProfile {
    /// Errors look like any other draw.
    #[default]
    Natural,
    /// Every error is rewritten to maximum confidence in `(0.95, 0.995)` with
    /// most residual mass on the true class.
    OverconfidentHighRcv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_samples: usize,
    pub n_classes: usize,
    pub class_priors: Vec<f64>,
    pub base_accuracy: f64,
    /// `< 1` sharpens rows (overconfidence), `> 1` flattens them.
    pub overconfidence_temp: f64,
    pub residual_mode: ResidualMode,
    pub seed: u64,
    /// Exponent `a` in the class strength `(prior / max prior)^a`; rarer
    /// classes get proportionally lower confidence and accuracy. Zero disables.
    #[serde(default)]
    pub prior_coupling: f64,
    #[serde(default)]
    pub error_profile: ErrorProfile,
}

impl SyntheticConfig {
    /// Balanced priors, no imbalance coupling, natural errors.
    pub fn balanced(n_samples: usize, n_classes: usize, seed: u64) -> Self {
        Self {
            n_samples,
            n_classes,
            class_priors: vec![1.0 / n_classes as f64; n_classes],
            base_accuracy: 0.8,
            overconfidence_temp: 1.0,
            residual_mode: ResidualMode::Uniform,
            seed,
            prior_coupling: 0.0,
            error_profile: ErrorProfile::Natural,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(CovarError::domain("n_samples must be positive"));
        }
        if self.n_classes < 2 {
            return Err(CovarError::domain("n_classes must be at least 2"));
        }
        if self.class_priors.len() != self.n_classes {
            return Err(CovarError::domain(format!(
                "{} priors for {} classes",
                self.class_priors.len(),
                self.n_classes
            )));
        }
        if self.class_priors.iter().any(|&p| p.is_nan() || p < 0.0 || !p.is_finite()) {
            return Err(CovarError::domain("priors must be non-negative and finite"));
        }
        let total = summation::sum(self.class_priors.iter().copied());
        if (total - 1.0).abs() > 1e-9 {
            return Err(CovarError::domain(format!("priors sum to {total}, expected 1")));
        }
        let chance = 1.0 / self.n_classes as f64;
        if !(self.base_accuracy > chance && self.base_accuracy <= 1.0) {
            return Err(CovarError::domain(format!(
                "base accuracy {} outside ({chance}, 1]",
                self.base_accuracy
            )));
        }
        if !(self.overconfidence_temp > 0.0 && self.overconfidence_temp.is_finite()) {
            return Err(CovarError::domain("temperature must be positive and finite"));
        }
        if !(self.prior_coupling >= 0.0 && self.prior_coupling.is_finite()) {
            return Err(CovarError::domain("prior coupling must be non-negative"));
        }
        Ok(())
    }
}

/// A generated batch with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticBatch {
    pub batch: ProbabilityBatch,
    pub labels: Vec<usize>,
}

pub fn generate(config: &SyntheticConfig) -> Result<SyntheticBatch> {
    config.validate()?;
    let k = config.n_classes;
    let chance = 1.0 / k as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let label_dist = WeightedIndex::new(&config.class_priors)
        .map_err(|e| CovarError::domain(format!("invalid priors: {e}")))?;
    let max_prior = config.class_priors.iter().cloned().fold(0.0, f64::max);
    let class_mean: Vec<f64> = config
        .class_priors
        .iter()
        .map(|&p| {
            let strength = (p / max_prior).powf(config.prior_coupling);
            chance + (config.base_accuracy - chance) * strength
        })
        .collect();
    let share_gamma = Gamma::new(RESIDUAL_CONCENTRATION, 1.0)
        .map_err(|e| CovarError::domain(format!("residual prior: {e}")))?;

    let mut values = Vec::with_capacity(config.n_samples * k);
    let mut labels = Vec::with_capacity(config.n_samples);
    let mut row = vec![0.0; k];
    for _ in 0..config.n_samples {
        let y = label_dist.sample(&mut rng);
        let confidence = draw_confidence(&mut rng, class_mean[y], chance)?;
        let correct = rng.random::<f64>() < confidence;
        let predicted = if correct { y } else { other_class(&mut rng, k, y) };

        let competitor = match config.residual_mode {
            ResidualMode::Uniform => None,
            ResidualMode::Bimodal => Some(if correct {
                other_class(&mut rng, k, predicted)
            } else {
                y
            }),
        };
        let share = competitor.map(|_| rng.random_range(0.6..0.9));
        fill_row(
            &mut rng,
            &mut row,
            predicted,
            confidence,
            competitor.zip(share),
            &share_gamma,
        );
        sharpen(&mut row, config.overconfidence_temp);

        if !correct && config.error_profile == ErrorProfile::OverconfidentHighRcv {
            let confidence = rng.random_range(0.95..0.995);
            let share = rng.random_range(0.7..0.95);
            fill_row(
                &mut rng,
                &mut row,
                predicted,
                confidence,
                Some((y, share)),
                &share_gamma,
            );
        }
        values.extend_from_slice(&row);
        labels.push(y);
    }
    let batch = ProbabilityBatch::new(k, values)?;
    Ok(SyntheticBatch { batch, labels })
}

fn draw_confidence<R: Rng>(rng: &mut R, mean: f64, chance: f64) -> Result<f64> {
    let scaled = (mean - chance) / (1.0 - chance);
    if scaled >= 1.0 {
        return Ok(1.0);
    }
    let beta = Beta::new(
        CONFIDENCE_CONCENTRATION * scaled,
        CONFIDENCE_CONCENTRATION * (1.0 - scaled),
    )
    .map_err(|e| CovarError::domain(format!("confidence prior: {e}")))?;
    Ok(chance + (1.0 - chance) * beta.sample(rng))
}

fn other_class<R: Rng>(rng: &mut R, k: usize, exclude: usize) -> usize {
    let pick = Uniform::new(0, k - 1).expect("k >= 2").sample(rng);
    if pick >= exclude {
        pick + 1
    } else {
        pick
    }
}

/// Writes a row with `confidence` on `predicted`; residual mass is either
/// Dirichlet-spread or split between a competitor (taking `share`) and the rest.
fn fill_row<R: Rng>(
    rng: &mut R,
    row: &mut [f64],
    predicted: usize,
    confidence: f64,
    competitor: Option<(usize, f64)>,
    share_gamma: &Gamma<f64>,
) {
    let k = row.len();
    let residual = 1.0 - confidence;
    row.fill(0.0);
    row[predicted] = confidence;
    match competitor {
        None => {
            let mut shares = dirichlet(rng, share_gamma, k - 1).into_iter();
            for (c, p) in row.iter_mut().enumerate() {
                if c != predicted {
                    *p = residual * shares.next().expect("k - 1 shares");
                }
            }
        }
        Some((rival, share)) => {
            let share = if k == 2 { 1.0 } else { share };
            row[rival] = residual * share;
            let rest = residual - row[rival];
            let mut shares = dirichlet(rng, share_gamma, k - 2).into_iter();
            for (c, p) in row.iter_mut().enumerate() {
                if c != predicted && c != rival {
                    *p = rest * shares.next().expect("k - 2 shares");
                }
            }
        }
    }
    // The drawn confidence can fall below a residual entry at low confidence.
    let (top, _) = argmax(row);
    if top != predicted {
        row.swap(top, predicted);
    }
}

/// Symmetric Dirichlet draw via normalised Gamma variates.
fn dirichlet<R: Rng>(rng: &mut R, gamma: &Gamma<f64>, len: usize) -> Vec<f64> {
    let mut draws: Vec<f64> = (0..len).map(|_| gamma.sample(rng)).collect();
    let total = summation::sum(draws.iter().copied());
    for d in draws.iter_mut() {
        *d /= total;
    }
    draws
}

fn sharpen(row: &mut [f64], temperature: f64) {
    if temperature == 1.0 {
        return;
    }
    let inv = 1.0 / temperature;
    // Scale by the maximum first so large exponents do not underflow.
    let peak = row.iter().cloned().fold(0.0, f64::max);
    for p in row.iter_mut() {
        *p = (*p / peak).powf(inv);
    }
    let total = summation::sum(row.iter().copied());
    for p in row.iter_mut() {
        *p /= total;
    }
}

/// Pseudo-label selection policy under evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SelectionPolicy {
    FixedThreshold { tau: f64 },
    CovarPcos { config: PcosConfig },
}

impl SelectionPolicy {
    pub fn name(&self) -> String {
        match self {
            SelectionPolicy::FixedThreshold { tau } => format!("fixed-tau={tau}"),
            SelectionPolicy::CovarPcos { config } => format!("covar-pcos(lambda={})", config.lambda),
        }
    }
}

/// Weights of at least this much count as selected for CoVar.
pub const COVAR_SELECTION_CUT: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyEvaluation {
    pub policy: String,
    pub selected: usize,
    /// Pseudo-label accuracy among selected samples; `None` if nothing was selected.
    pub accuracy: Option<f64>,
    pub mean_weight: f64,
    /// `sum(w * correct) / sum(w)`; `None` if every weight is zero.
    pub weighted_accuracy: Option<f64>,
    pub retention: Vec<Option<ClassRetention>>,
    pub ece: f64,
}

pub fn evaluate_policies(
    batch: &ProbabilityBatch,
    true_labels: &[usize],
    policies: &[SelectionPolicy],
) -> Result<Vec<PolicyEvaluation>> {
    let (confidences, correct) = baseline::confidence_and_correctness(batch, true_labels)?;
    let calibration = baseline::ece(&confidences, &correct, DEFAULT_BINS)?;
    policies
        .iter()
        .map(|policy| {
            let weights: Vec<f64> = match policy {
                SelectionPolicy::FixedThreshold { tau } => {
                    let sel = baseline::threshold_select(batch, &ThresholdPolicy::new(*tau)?);
                    sel.mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect()
                }
                SelectionPolicy::CovarPcos { config } => pcos::pcos(batch, config)?.weights.weights,
            };
            let mask: Vec<bool> = weights.iter().map(|&w| w >= COVAR_SELECTION_CUT).collect();
            let selected = mask.iter().filter(|&&m| m).count();
            let hits = mask.iter().zip(&correct).filter(|(&m, &c)| m && c).count();
            let total_weight = summation::sum(weights.iter().copied());
            let correct_weight = summation::sum(
                weights.iter().zip(&correct).filter(|(_, &c)| c).map(|(&w, _)| w),
            );
            Ok(PolicyEvaluation {
                policy: policy.name(),
                selected,
                accuracy: (selected > 0).then(|| hits as f64 / selected as f64),
                mean_weight: total_weight / weights.len() as f64,
                weighted_accuracy: (total_weight > 0.0).then(|| correct_weight / total_weight),
                retention: baseline::retention_from_mask(batch.n_classes(), true_labels, &mask)?,
                ece: calibration.ece,
            })
        })
        .collect()
}
