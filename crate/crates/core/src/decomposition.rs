//! Second-order cross-entropy decomposition and its batch-level form.
//!
//! Expanding `log p(k)` around the residual mean `mu` turns the cross-entropy
//! against the ideal target into
//!
//! ```text
//! CE = -log p(k') + (K-1) eps log(p(k') / mu) + g * v + R
//! g  = (K-1)^3 eps / (2 (1 - p(k'))^2)
//! |R| <= C v^{3/2},  C = (K-1)^{3/2} eps / (3 (1 - rho)^3 mu^3)
//! ```
//!
//! With the adaptive choice `eps = mu` the coefficient reduces to
//! `(K-1)^2 / (2 (1 - p(k')))`.

use serde::{Deserialize, Serialize};

use crate::error::{CovarError, Result};
use crate::stats::{exact_ce, IdealDistribution, PredictionStats, CLAMP_GAP};
use crate::summation;

/// How the ideal target's residual level `eps` is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "value")]
pub enum EpsilonPolicy {
    /// A fixed `eps` in `(0, 1/(K-1))`.
    Fixed(f64),
    /// Per-sample `eps = mu = (1 - p(k')) / (K - 1)`.
    Adaptive,
}

impl EpsilonPolicy {
    /// The `eps` used for a sample with `n_classes` classes and residual mean `mu`.
    pub fn resolve(&self, n_classes: usize, residual_mean: f64) -> Result<f64> {
        match *self {
            EpsilonPolicy::Adaptive => Ok(residual_mean),
            EpsilonPolicy::Fixed(eps) => {
                let upper = 1.0 / (n_classes - 1) as f64;
                if eps > 0.0 && eps < upper {
                    Ok(eps)
                } else {
                    Err(CovarError::domain(format!(
                        "fixed epsilon {eps} outside (0, {upper}) for K = {n_classes}"
                    )))
                }
            }
        }
    }
}

/// Which closed form is used for the middle (first-order) term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApproxForm {
    /// Direct substitution of the expansion: `+(K-1) eps log(p(k') / mu)`.
    #[default]
    Derived,
    /// Log-odds closed form: `-(K-1) eps log(p(k') / (1 - p(k')))`.
    LogOdds,
}

/// Second-order expansion of `log p_k` around `mu`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaylorExpansion {
    pub value: f64,
    pub remainder_bound: f64,
}

/// `log mu + delta/mu - delta^2/(2 mu^2)` with the Lagrange bound
/// `|delta|^3 / (3 (1 - rho)^3 mu^3)`.
pub fn taylor_log_expand(p_k: f64, mu: f64, rho: f64) -> Result<TaylorExpansion> {
    if mu.is_nan() || mu <= 0.0 {
        return Err(CovarError::AssumptionViolation(format!(
            "expansion point {mu} is not positive"
        )));
    }
    if !(0.0..1.0).contains(&rho) {
        return Err(CovarError::AssumptionViolation(format!(
            "rho = {rho} outside [0, 1)"
        )));
    }
    let delta = p_k - mu;
    if delta.abs() > rho * mu * (1.0 + 1e-12) {
        return Err(CovarError::AssumptionViolation(format!(
            "p = {p_k} outside the band mu (1 +/- rho) = [{}, {}]",
            (1.0 - rho) * mu,
            (1.0 + rho) * mu
        )));
    }
    let x = delta / mu;
    let value = mu.ln() + x - 0.5 * x * x;
    let remainder_bound = x.abs().powi(3) / (3.0 * (1.0 - rho).powi(3));
    Ok(TaylorExpansion {
        value,
        remainder_bound,
    })
}

/// `log(1 + x) - x + x^2/2`, accurate for small `|x|`.
pub(crate) fn log_taylor_remainder(x: f64) -> f64 {
    if x.abs() < 0.1 {
        // x^3/3 - x^4/4 + x^5/5 - ...
        let mut term = x * x * x;
        let mut acc = 0.0;
        for n in 3..40 {
            let contrib = term / n as f64;
            acc += if n % 2 == 1 { contrib } else { -contrib };
            if contrib.abs() <= acc.abs() * 1e-18 {
                break;
            }
            term *= x;
        }
        acc
    } else {
        x.ln_1p() - x + 0.5 * x * x
    }
}

/// Per-sample decomposition of the cross-entropy against the ideal target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CEDecomposition {
    pub form: ApproxForm,
    pub epsilon: f64,
    pub exact_ce: f64,
    /// `f` such that `approx_ce = -f + g v`.
    pub f_term: f64,
    pub g_coeff: f64,
    pub rcv: f64,
    pub middle_term: f64,
    pub approx_ce: f64,
    /// `C v^{3/2}`; `None` when the residual-scale assumption fails.
    pub remainder_bound: Option<f64>,
    /// `exact_ce - approx_ce`.
    pub remainder_actual: f64,
    pub assumption_ok: bool,
}

/// Decomposition with the derived middle term.
pub fn decompose_sample(stats: &PredictionStats, policy: EpsilonPolicy) -> Result<CEDecomposition> {
    decompose_sample_with(stats, policy, ApproxForm::Derived)
}

pub fn decompose_sample_with(
    stats: &PredictionStats,
    policy: EpsilonPolicy,
    form: ApproxForm,
) -> Result<CEDecomposition> {
    if !stats.is_usable() {
        return Err(CovarError::domain(format!(
            "degenerate prediction (max confidence {}) must be clamped first",
            stats.max_conf
        )));
    }
    let n_classes = stats.n_classes;
    let k1 = (n_classes - 1) as f64;
    let p = stats.max_conf;
    let mu = stats.residual_mean;
    let v = stats.rcv;
    let eps = policy.resolve(n_classes, mu)?;

    let target = IdealDistribution::new(eps, stats.max_class, n_classes)?;
    let exact = exact_ce(&stats.distribution(), &target)?;
    let g = g_unchecked(p, n_classes, eps, policy);

    let neg_log_p = -p.ln();
    let (middle, f_term) = match form {
        ApproxForm::Derived => {
            let middle = k1 * eps * (p / mu).ln();
            (middle, -neg_log_p - middle)
        }
        ApproxForm::LogOdds => {
            let f = -neg_log_p + k1 * eps * (p / (1.0 - p)).ln();
            (-k1 * eps * (p / (1.0 - p)).ln(), f)
        }
    };
    let approx = neg_log_p + middle + g * v;

    let assumption_ok = stats.assumption_holds();
    let remainder_bound = if assumption_ok {
        let c = k1.powf(1.5) * eps / (3.0 * (1.0 - stats.rho).powi(3) * mu.powi(3));
        Some(c * v.powf(1.5))
    } else {
        None
    };

    let remainder_actual = match form {
        // exact - approx = -eps * sum_k [log p(k) - log mu - x + x^2/2] with
        // x = delta/mu; summing the remainders directly avoids cancelling two
        // O(1) quantities.
        ApproxForm::Derived if mu > 0.0 => {
            let r = summation::sum(
                stats
                    .deviations
                    .iter()
                    .map(|d| log_taylor_remainder(d / mu)),
            );
            -eps * r
        }
        _ => exact - approx,
    };

    Ok(CEDecomposition {
        form,
        epsilon: eps,
        exact_ce: exact,
        f_term,
        g_coeff: g,
        rcv: v,
        middle_term: middle,
        approx_ce: approx,
        remainder_bound,
        remainder_actual,
        assumption_ok,
    })
}

fn g_unchecked(max_conf: f64, n_classes: usize, eps: f64, policy: EpsilonPolicy) -> f64 {
    let k1 = (n_classes - 1) as f64;
    let gap = 1.0 - max_conf;
    match policy {
        EpsilonPolicy::Adaptive => k1 * k1 / (2.0 * gap),
        EpsilonPolicy::Fixed(_) => k1.powi(3) * eps / (2.0 * gap * gap),
    }
}

/// Penalty weight `g` on the residual-class variance.
///
/// `max_conf` must lie in `[1/K, 1 - 1e-6]`.
pub fn g_coefficient(max_conf: f64, n_classes: usize, policy: EpsilonPolicy) -> Result<f64> {
    if n_classes < 2 {
        return Err(CovarError::domain("g coefficient needs K >= 2"));
    }
    let lower = 1.0 / n_classes as f64;
    let upper = 1.0 - CLAMP_GAP;
    if !(max_conf >= lower * (1.0 - 1e-12) && max_conf <= upper) {
        return Err(CovarError::domain(format!(
            "max confidence {max_conf} outside [{lower}, {upper}]"
        )));
    }
    let mu = (1.0 - max_conf) / (n_classes - 1) as f64;
    let eps = policy.resolve(n_classes, mu)?;
    Ok(g_unchecked(max_conf, n_classes, eps, policy))
}

/// First and second moments of paired `(g, v)` values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GvMoments {
    pub g_bar: f64,
    pub v_bar: f64,
    pub mean_gv: f64,
    /// Population covariance `(1/N) sum (g - g_bar)(v - v_bar)`.
    pub cov: f64,
}

pub fn gv_moments(g: &[f64], v: &[f64]) -> Result<GvMoments> {
    if g.is_empty() || g.len() != v.len() {
        return Err(CovarError::domain(format!(
            "need equal non-empty g and v, got {} and {}",
            g.len(),
            v.len()
        )));
    }
    let n = g.len() as f64;
    let g_bar = summation::mean(g);
    let v_bar = summation::mean(v);
    let mean_gv = summation::sum(g.iter().zip(v).map(|(a, b)| a * b)) / n;
    let cov = summation::sum(g.iter().zip(v).map(|(a, b)| (a - g_bar) * (b - v_bar))) / n;
    Ok(GvMoments {
        g_bar,
        v_bar,
        mean_gv,
        cov,
    })
}

/// Batch-level decomposition `CE_B ~ -MC + g_bar v_bar + Cov(g, v)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchDecomposition {
    pub n_samples: usize,
    /// Mean of `f` over the batch.
    pub mc_bar: f64,
    pub g_bar: f64,
    pub v_bar: f64,
    /// Scaled residual-class variance `g_bar * v_bar`.
    pub srcv: f64,
    pub mean_gv: f64,
    pub cov_gv: f64,
    /// Mean exact cross-entropy.
    pub batch_ce: f64,
    /// Mean approximate cross-entropy, `-mc_bar + srcv + cov_gv` up to rounding.
    pub approx_batch_ce: f64,
    /// Mean of `-log p(k') + g v` (the middle term dropped).
    pub lower_bound: f64,
    /// Mean of the per-sample `C v^{3/2}`; `None` if any sample violates the assumption.
    pub remainder_batch_bound: Option<f64>,
    /// Samples that were clamped before decomposition.
    pub clamped_samples: usize,
}

/// Decomposes every sample (clamping degenerate ones) and reduces in index order.
pub fn decompose_batch(
    batch_stats: &[PredictionStats],
    policy: EpsilonPolicy,
) -> Result<BatchDecomposition> {
    decompose_batch_with(batch_stats, policy, ApproxForm::Derived)
        .map(|(batch, _)| batch)
}

/// Like [`decompose_batch`] but also returns the per-sample decompositions.
pub fn decompose_batch_with(
    batch_stats: &[PredictionStats],
    policy: EpsilonPolicy,
    form: ApproxForm,
) -> Result<(BatchDecomposition, Vec<CEDecomposition>)> {
    if batch_stats.is_empty() {
        return Err(CovarError::domain("cannot decompose an empty batch"));
    }
    let mut clamped_samples = 0;
    let samples = batch_stats
        .iter()
        .map(|s| {
            if s.is_usable() {
                decompose_sample_with(s, policy, form)
            } else {
                clamped_samples += 1;
                decompose_sample_with(&s.clamped(), policy, form)
            }
        })
        .collect::<Result<Vec<_>>>()?;

    let n = samples.len() as f64;
    let g: Vec<f64> = samples.iter().map(|d| d.g_coeff).collect();
    let v: Vec<f64> = samples.iter().map(|d| d.rcv).collect();
    let moments = gv_moments(&g, &v)?;

    let mean_of = |f: &dyn Fn(&CEDecomposition) -> f64| summation::sum(samples.iter().map(f)) / n;
    let mc_bar = mean_of(&|d| d.f_term);
    let batch_ce = mean_of(&|d| d.exact_ce);
    let approx_batch_ce = mean_of(&|d| d.approx_ce);
    let lower_bound = mean_of(&|d| d.approx_ce - d.middle_term);
    let remainder_batch_bound = samples
        .iter()
        .map(|d| d.remainder_bound)
        .collect::<Option<Vec<f64>>>()
        .map(|b| summation::sum(b) / n);

    Ok((
        BatchDecomposition {
            n_samples: samples.len(),
            mc_bar,
            g_bar: moments.g_bar,
            v_bar: moments.v_bar,
            srcv: moments.g_bar * moments.v_bar,
            mean_gv: moments.mean_gv,
            cov_gv: moments.cov,
            batch_ce,
            approx_batch_ce,
            lower_bound,
            remainder_batch_bound,
            clamped_samples,
        },
        samples,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn expansion_at_mean_is_exact() {
        let t = taylor_log_expand(0.15, 0.15, 1.0 / 3.0).unwrap();
        assert_eq!(t.value, 0.15_f64.ln());
        assert_eq!(t.remainder_bound, 0.0);
    }

    #[test]
    fn expansion_hand_examples() {
        // Oracle: log mu + d/mu - d^2/(2 mu^2) evaluated by hand, compared to ln p.
        let t = taylor_log_expand(0.2, 0.15, 1.0 / 3.0).unwrap();
        assert!(close(t.value, -1.61934, 1e-4));
        let err = (0.2_f64.ln() - t.value).abs();
        assert!(close(err, 0.0099, 5e-4));
        assert!(err <= t.remainder_bound);

        let t = taylor_log_expand(0.1, 0.15, 1.0 / 3.0).unwrap();
        assert!(close(t.value, -2.28601, 1e-4));
        let err = (0.1_f64.ln() - t.value).abs();
        assert!(close(err, 0.0166, 5e-4));
        assert!(err <= t.remainder_bound);
    }

    #[test]
    fn expansion_rejects_assumption_violations() {
        assert!(matches!(
            taylor_log_expand(0.2, 0.15, 1.0),
            Err(CovarError::AssumptionViolation(_))
        ));
        assert!(matches!(
            taylor_log_expand(0.3, 0.15, 0.5),
            Err(CovarError::AssumptionViolation(_))
        ));
        assert!(taylor_log_expand(0.1, 0.0, 0.5).is_err());
    }

    #[test]
    fn log_remainder_series_matches_direct_form() {
        for &x in &[0.099, -0.099, 0.05, -0.02] {
            let direct = (1.0_f64 + x).ln() - x + 0.5 * x * x;
            assert!(close(log_taylor_remainder(x), direct, 1e-15));
        }
        assert_eq!(log_taylor_remainder(0.0), 0.0);
        let x = 1e-6;
        assert!(close(log_taylor_remainder(x) / (x * x * x / 3.0), 1.0, 1e-5));
    }

    #[test]
    fn worked_example_adaptive() {
        let s = PredictionStats::from_row(&[0.7, 0.2, 0.1]);
        let d = decompose_sample(&s, EpsilonPolicy::Adaptive).unwrap();
        assert!(close(d.epsilon, 0.15, 1e-15));
        assert!(close(d.g_coeff, 6.66667, 1e-5));
        assert!(close(d.g_coeff * d.rcv, 0.016667, 1e-6));
        assert!(close(d.middle_term, 0.46213, 1e-4));
        assert!(close(d.approx_ce, 0.83547, 1e-4));
        assert!(close(d.exact_ce, 0.83647, 1e-4));
        let bound = d.remainder_bound.unwrap();
        assert!(close(bound, 0.01768, 1e-4));
        assert!(close(d.remainder_actual.abs(), 0.00100, 1e-4));
        assert!(d.remainder_actual.abs() <= bound);
        assert!(close(d.remainder_actual, d.exact_ce - d.approx_ce, 1e-14));
        assert!(close(d.approx_ce, -d.f_term + d.g_coeff * d.rcv, 1e-14));
    }

    #[test]
    fn zero_variance_is_exact() {
        let s = PredictionStats::from_row(&[0.6, 0.1, 0.1, 0.1, 0.1]);
        for policy in [EpsilonPolicy::Adaptive, EpsilonPolicy::Fixed(0.01)] {
            let d = decompose_sample(&s, policy).unwrap();
            assert!(d.rcv < 1e-30);
            assert!(close(d.approx_ce, -(0.6_f64.ln()) + d.middle_term, 1e-12));
            assert!(d.remainder_actual.abs() < 1e-12);
            assert!((d.exact_ce - d.approx_ce).abs() < 1e-12);
        }
    }

    #[test]
    fn binary_classes_have_no_variance() {
        for &p in &[0.5, 0.6, 0.93, 0.999] {
            let s = PredictionStats::from_row(&[1.0 - p, p]);
            assert_eq!(s.rcv, 0.0);
            for policy in [EpsilonPolicy::Adaptive, EpsilonPolicy::Fixed(0.2)] {
                let d = decompose_sample(&s, policy).unwrap();
                assert_eq!(d.g_coeff * d.rcv, 0.0);
                assert!(close(d.approx_ce, d.exact_ce, 1e-12));
            }
        }
    }

    #[test]
    fn degenerate_sample_needs_clamping() {
        let s = PredictionStats::from_row(&[1.0, 0.0, 0.0]);
        assert!(decompose_sample(&s, EpsilonPolicy::Adaptive).is_err());
        let d = decompose_sample(&s.clamped(), EpsilonPolicy::Adaptive).unwrap();
        assert!(d.exact_ce.is_finite() && d.approx_ce.is_finite());
    }

    #[test]
    fn log_odds_form_flips_middle_term() {
        let s = PredictionStats::from_row(&[0.7, 0.2, 0.1]);
        let d = decompose_sample_with(&s, EpsilonPolicy::Adaptive, ApproxForm::LogOdds).unwrap();
        // -(K-1) eps log(p / (1-p)) = -0.3 ln(7/3)
        assert!(close(d.middle_term, -0.3 * (0.7_f64 / 0.3).ln(), 1e-14));
        assert!(close(d.approx_ce, -d.f_term + d.g_coeff * d.rcv, 1e-14));
        assert!(close(d.remainder_actual, d.exact_ce - d.approx_ce, 0.0));
        // The literal form misses the exact value by far more than the bound.
        assert!(d.remainder_actual.abs() > d.remainder_bound.unwrap());
    }

    #[test]
    fn g_coefficient_examples() {
        let g = g_coefficient(0.7, 3, EpsilonPolicy::Adaptive).unwrap();
        assert!(close(g, 6.66667, 1e-5));
        assert_eq!(g_coefficient(0.5, 3, EpsilonPolicy::Adaptive).unwrap(), 4.0);
        for &gamma in &[0.5, 0.1, 0.01] {
            let eps = 0.01;
            let g = g_coefficient(1.0 - gamma, 5, EpsilonPolicy::Fixed(eps)).unwrap();
            assert!(g <= 4.0_f64.powi(3) * eps / (2.0 * gamma * gamma) * (1.0 + 1e-12));
        }
    }

    #[test]
    fn g_coefficient_domain() {
        assert!(g_coefficient(0.2, 3, EpsilonPolicy::Adaptive).is_err());
        assert!(g_coefficient(1.0 - 1e-7, 3, EpsilonPolicy::Adaptive).is_err());
        assert!(g_coefficient(1.0 - 1e-6, 3, EpsilonPolicy::Adaptive).is_ok());
        assert!(g_coefficient(0.7, 3, EpsilonPolicy::Fixed(0.6)).is_err());
    }

    #[test]
    fn g_coefficient_strictly_increasing() {
        for policy in [EpsilonPolicy::Adaptive, EpsilonPolicy::Fixed(0.01)] {
            let k = 10;
            let lo = 1.0 / k as f64;
            let hi = 1.0 - CLAMP_GAP;
            let grid: Vec<f64> = (0..1000).map(|i| lo + (hi - lo) * i as f64 / 999.0).collect();
            let gs: Vec<f64> = grid
                .iter()
                .map(|&p| g_coefficient(p, k, policy).unwrap())
                .collect();
            assert!(gs.windows(2).all(|w| w[1] > w[0]));
        }
    }

    #[test]
    fn covariance_hand_example() {
        let m = gv_moments(&[2.0, 4.0], &[0.1, 0.3]).unwrap();
        assert!(close(m.mean_gv, 0.7, 1e-15));
        assert!(close(m.g_bar * m.v_bar, 0.6, 1e-15));
        assert!(close(m.cov, 0.1, 1e-15));
    }

    #[test]
    fn identical_samples_have_zero_covariance() {
        let s = PredictionStats::from_row(&[0.55, 0.3, 0.1, 0.05]);
        let batch = vec![s; 17];
        let b = decompose_batch(&batch, EpsilonPolicy::Adaptive).unwrap();
        assert!(b.cov_gv.abs() <= 1e-12);
        assert!(close(b.mean_gv, b.srcv + b.cov_gv, 1e-15));
    }

    #[test]
    fn empty_batch_is_rejected() {
        assert!(decompose_batch(&[], EpsilonPolicy::Adaptive).is_err());
    }

    #[test]
    fn batch_clamps_degenerate_rows() {
        let batch = vec![
            PredictionStats::from_row(&[1.0, 0.0, 0.0]),
            PredictionStats::from_row(&[0.7, 0.2, 0.1]),
        ];
        let b = decompose_batch(&batch, EpsilonPolicy::Adaptive).unwrap();
        assert_eq!(b.clamped_samples, 1);
        assert!(b.batch_ce.is_finite());
        assert!(b.batch_ce >= b.lower_bound - b.remainder_batch_bound.unwrap());
    }
}
