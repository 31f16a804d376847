//! Prediction separation in the confidence-variance plane.
//!
//! Each prediction becomes a column `h_n` of a `2 x N` matrix `Phi`. The
//! binary partition maximising `Tr(S^T Phi^T Phi S)` is relaxed to the top two
//! eigenvectors of the Gram matrix `Phi^T Phi`; because `Phi` has two rows
//! those come from the `2 x 2` matrix `Phi Phi^T` in closed form:
//! `u_i(n) = (h_n . w_i) / sigma_i` with `w_i` the left singular vectors.
//!
//! The reliable cluster is the one maximising `mean[0] - lambda * std[1]`,
//! and every prediction receives a Gaussian weight around that cluster's mean.

use serde::{Deserialize, Serialize};

use crate::error::{CovarError, Result};
use crate::stats::{compute_stats, PredictionStats, ProbabilityBatch};
use crate::summation;

/// Scoring weight on the reliable cluster's variance-axis spread.
pub const DEFAULT_LAMBDA: f64 = 0.25;

/// `sigma_2 / sigma_1` at or below this counts as rank one.
const RANK_TOL: f64 = 1e-12;
/// `(lambda_1 - lambda_2) / lambda_1` at or below this counts as isotropic.
const ISOTROPY_TOL: f64 = 1e-12;
/// Largest instance the brute-force partitioner accepts.
pub const BRUTE_FORCE_MAX_N: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingKind {
    /// `[log p(k'), -(K-1)^2 / (2 (1 - p(k'))) * v]`.
    #[default]
    Theory,
    /// `[p(k'), v]`.
    Raw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingMatrix {
    pub kind: EmbeddingKind,
    /// Column `n` is the embedded prediction `h_n`.
    pub columns: Vec<[f64; 2]>,
}

impl EmbeddingMatrix {
    pub fn new(kind: EmbeddingKind, columns: Vec<[f64; 2]>) -> Result<Self> {
        if let Some(n) = columns.iter().position(|c| !c[0].is_finite() || !c[1].is_finite()) {
            return Err(CovarError::domain(format!("embedding column {n} is not finite")));
        }
        Ok(Self { kind, columns })
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    /// Every entry multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            kind: self.kind,
            columns: self
                .columns
                .iter()
                .map(|c| [c[0] * factor, c[1] * factor])
                .collect(),
        }
    }
}

/// Embeds the (clamped) statistics of `N >= 2` predictions.
pub fn embed(
    batch_stats: &[PredictionStats],
    kind: EmbeddingKind,
    n_classes: usize,
) -> Result<EmbeddingMatrix> {
    if batch_stats.len() < 2 {
        return Err(CovarError::domain(format!(
            "partitioning needs at least 2 predictions, got {}",
            batch_stats.len()
        )));
    }
    let k1 = (n_classes - 1) as f64;
    let columns = batch_stats
        .iter()
        .enumerate()
        .map(|(n, s)| {
            if s.n_classes != n_classes {
                return Err(CovarError::domain(format!(
                    "prediction {n} has {} classes, expected {n_classes}",
                    s.n_classes
                )));
            }
            let s = s.clamped();
            Ok(match kind {
                EmbeddingKind::Theory => [
                    s.max_conf.ln(),
                    -(k1 * k1) / (2.0 * (1.0 - s.max_conf)) * s.rcv,
                ],
                EmbeddingKind::Raw => [s.max_conf, s.rcv],
            })
        })
        .collect::<Result<Vec<_>>>()?;
    EmbeddingMatrix::new(kind, columns)
}

/// Binary assignment `S in {0,1}^{N x 2}` stored as one cluster id per column.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionMatrix {
    assignment: Vec<u8>,
}

impl SelectionMatrix {
    pub fn new(assignment: Vec<u8>) -> Result<Self> {
        if let Some(n) = assignment.iter().position(|&c| c > 1) {
            return Err(CovarError::domain(format!(
                "sample {n} assigned to cluster {}, expected 0 or 1",
                assignment[n]
            )));
        }
        Ok(Self { assignment })
    }

    pub fn assignment(&self) -> &[u8] {
        &self.assignment
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    pub fn cluster_sizes(&self) -> [usize; 2] {
        let ones = self.assignment.iter().filter(|&&c| c == 1).count();
        [self.assignment.len() - ones, ones]
    }
}

/// `sum_c ||sum_{n in c} h_n||^2`, divided by `n_c` per cluster when normalised.
pub fn trace_objective(phi: &EmbeddingMatrix, s: &SelectionMatrix, normalized: bool) -> Result<f64> {
    if s.len() != phi.len() {
        return Err(CovarError::domain(format!(
            "assignment has {} entries for {} columns",
            s.len(),
            phi.len()
        )));
    }
    let sizes = s.cluster_sizes();
    if normalized && sizes.contains(&0) {
        return Err(CovarError::domain(
            "normalised objective needs both clusters non-empty",
        ));
    }
    let mut total = 0.0;
    for cluster in 0..2u8 {
        let members = || {
            phi.columns
                .iter()
                .zip(s.assignment())
                .filter(move |(_, &c)| c == cluster)
                .map(|(h, _)| h)
        };
        let sx = summation::sum(members().map(|h| h[0]));
        let sy = summation::sum(members().map(|h| h[1]));
        let norm2 = sx * sx + sy * sy;
        total += if normalized {
            norm2 / sizes[cluster as usize] as f64
        } else {
            norm2
        };
    }
    Ok(total)
}

/// Exhaustive search for the non-trivial bipartition maximising the normalised
/// objective. Ties resolve to the lexicographically smallest assignment.
pub fn brute_force_partition(phi: &EmbeddingMatrix) -> Result<(SelectionMatrix, f64)> {
    let n = phi.len();
    if n < 2 {
        return Err(CovarError::domain("brute force needs at least 2 columns"));
    }
    if n > BRUTE_FORCE_MAX_N {
        return Err(CovarError::domain(format!(
            "brute force limited to {BRUTE_FORCE_MAX_N} columns, got {n}"
        )));
    }
    // Sample 0 stays in cluster 0 (mirror symmetry); bit (n-1-i) of `mask`
    // is the cluster of sample i, so increasing masks are lexicographic.
    let mut best: Option<(Vec<u8>, f64)> = None;
    for mask in 1u32..(1u32 << (n - 1)) {
        let assignment: Vec<u8> = (0..n)
            .map(|i| if i == 0 { 0 } else { ((mask >> (n - 1 - i)) & 1) as u8 })
            .collect();
        let s = SelectionMatrix { assignment };
        let value = trace_objective(phi, &s, true)?;
        let improves = match &best {
            None => true,
            Some((_, b)) => value > b + 1e-12 * b.abs().max(1.0),
        };
        if improves {
            best = Some((s.assignment, value));
        }
    }
    let (assignment, value) = best.expect("n >= 2 yields at least one split");
    Ok((SelectionMatrix { assignment }, value))
}

/// Result of the closed-form spectral relaxation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralAssignment {
    pub selection: SelectionMatrix,
    /// `sigma_1 >= sigma_2`.
    pub singular_values: [f64; 2],
    /// Left singular vectors `w_1`, `w_2`.
    pub left_vectors: [[f64; 2]; 2],
    /// `sigma_2` is (numerically) zero; everything goes to cluster 0.
    pub rank_deficient: bool,
    /// `sigma_1 = sigma_2`; the canonical basis is used.
    pub isotropic: bool,
}

/// Assigns each column to the top-two Gram eigenvector with the larger magnitude
/// entry, computing everything from the `2 x 2` matrix `Phi Phi^T`.
pub fn spectral_assign(phi: &EmbeddingMatrix) -> Result<SpectralAssignment> {
    if phi.len() < 2 {
        return Err(CovarError::domain("spectral assignment needs at least 2 columns"));
    }
    let a = summation::sum(phi.columns.iter().map(|h| h[0] * h[0]));
    let b = summation::sum(phi.columns.iter().map(|h| h[0] * h[1]));
    let c = summation::sum(phi.columns.iter().map(|h| h[1] * h[1]));
    if a + c == 0.0 {
        return Err(CovarError::domain("embedding matrix is all zeros"));
    }

    // Rotation diagonalising [[a, b], [b, c]]; w1 takes the larger eigenvalue.
    let theta = 0.5 * (2.0 * b).atan2(a - c);
    let (sin, cos) = theta.sin_cos();
    let mut basis = [[cos, sin], [-sin, cos]];
    let mut lambdas = projected_energy(phi, &basis);
    if lambdas[1] > lambdas[0] {
        basis.swap(0, 1);
        lambdas.swap(0, 1);
    }

    let isotropic = lambdas[0] - lambdas[1] <= ISOTROPY_TOL * lambdas[0];
    if isotropic {
        basis = [[1.0, 0.0], [0.0, 1.0]];
        lambdas = projected_energy(phi, &basis);
        if lambdas[1] > lambdas[0] {
            basis.swap(0, 1);
            lambdas.swap(0, 1);
        }
    }
    let sigmas = [lambdas[0].sqrt(), lambdas[1].sqrt()];
    let rank_deficient = sigmas[1] <= RANK_TOL * sigmas[0];

    let selection = if rank_deficient {
        SelectionMatrix {
            assignment: vec![0; phi.len()],
        }
    } else {
        assign_with_basis(phi, &basis, &sigmas)
    };
    Ok(SpectralAssignment {
        selection,
        singular_values: sigmas,
        left_vectors: basis,
        rank_deficient,
        isotropic,
    })
}

/// `Phi^T`-side eigenvector entries from left singular vectors:
/// `u_i(n) = (h_n . w_i) / sigma_i`, assigned to `argmax_i |u_i(n)|` (ties to 0).
pub fn assign_with_basis(
    phi: &EmbeddingMatrix,
    left_vectors: &[[f64; 2]; 2],
    singular_values: &[f64; 2],
) -> SelectionMatrix {
    let assignment = phi
        .columns
        .iter()
        .map(|h| {
            let u1 = dot(h, &left_vectors[0]) / singular_values[0];
            let u2 = dot(h, &left_vectors[1]) / singular_values[1];
            u8::from(u2.abs() > u1.abs())
        })
        .collect();
    SelectionMatrix { assignment }
}

fn dot(h: &[f64; 2], w: &[f64; 2]) -> f64 {
    h[0] * w[0] + h[1] * w[1]
}

fn projected_energy(phi: &EmbeddingMatrix, basis: &[[f64; 2]; 2]) -> [f64; 2] {
    [
        summation::sum(phi.columns.iter().map(|h| dot(h, &basis[0]).powi(2))),
        summation::sum(phi.columns.iter().map(|h| dot(h, &basis[1]).powi(2))),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub mean: [f64; 2],
    /// Population standard deviation per dimension (0 for a singleton).
    pub std: [f64; 2],
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterStats {
    /// `None` for an empty cluster.
    pub clusters: [Option<ClusterSummary>; 2],
}

pub fn cluster_statistics(phi: &EmbeddingMatrix, s: &SelectionMatrix) -> Result<ClusterStats> {
    if s.len() != phi.len() {
        return Err(CovarError::domain(format!(
            "assignment has {} entries for {} columns",
            s.len(),
            phi.len()
        )));
    }
    let summarize = |cluster: u8| -> Option<ClusterSummary> {
        let (xs, ys): (Vec<f64>, Vec<f64>) = phi
            .columns
            .iter()
            .zip(s.assignment())
            .filter(|(_, &c)| c == cluster)
            .map(|(h, _)| (h[0], h[1]))
            .unzip();
        if xs.is_empty() {
            return None;
        }
        let mean = [summation::mean(&xs), summation::mean(&ys)];
        let std = [
            summation::population_std(&xs, mean[0]),
            summation::population_std(&ys, mean[1]),
        ];
        Some(ClusterSummary {
            mean,
            std,
            size: xs.len(),
        })
    };
    Ok(ClusterStats {
        clusters: [summarize(0), summarize(1)],
    })
}

/// `argmax_c (mean_c[0] - lambda * std_c[1])`, ties to cluster 0. A lone
/// non-empty cluster is reliable by default.
pub fn select_reliable_cluster(stats: &ClusterStats, lambda: f64) -> Result<usize> {
    let score = |s: &ClusterSummary| s.mean[0] - lambda * s.std[1];
    match &stats.clusters {
        [Some(c0), Some(c1)] => Ok(if score(c1) > score(c0) { 1 } else { 0 }),
        [Some(_), None] => Ok(0),
        [None, Some(_)] => Ok(1),
        [None, None] => Err(CovarError::domain("both clusters are empty")),
    }
}

/// Shape of the per-dimension Gaussian factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GaussianExponent {
    /// `exp(-(h - mu)^2 / (2 sigma^2))`.
    #[default]
    Standard,
    /// `exp(-((h - mu) / (2 sigma))^2)`.
    Quarter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityWeights {
    pub weights: Vec<f64>,
    pub reliable_cluster: usize,
    /// Samples beating the reliable mean on both axes; their weight is 1.
    pub preserved_mask: Vec<bool>,
}

fn gaussian_factor(h: f64, mu: f64, sigma: f64, exponent: GaussianExponent) -> f64 {
    if sigma == 0.0 {
        return if h == mu { 1.0 } else { 0.0 };
    }
    let z = (h - mu) / sigma;
    match exponent {
        GaussianExponent::Standard => (-0.5 * z * z).exp(),
        GaussianExponent::Quarter => (-0.25 * z * z).exp(),
    }
}

/// Gaussian weights around the reliable cluster, with the preservation rule.
///
/// On the theory embedding both axes grow with reliability, so preservation
/// is `h > mu` on both; on the raw embedding the variance axis is inverted.
pub fn gaussian_weights(
    phi: &EmbeddingMatrix,
    reliable_cluster: usize,
    reliable: &ClusterSummary,
    exponent: GaussianExponent,
) -> ReliabilityWeights {
    let (mu, sigma) = (reliable.mean, reliable.std);
    let mut weights = Vec::with_capacity(phi.len());
    let mut preserved_mask = Vec::with_capacity(phi.len());
    for h in &phi.columns {
        let preserved = match phi.kind {
            EmbeddingKind::Theory => h[0] > mu[0] && h[1] > mu[1],
            EmbeddingKind::Raw => h[0] > mu[0] && h[1] < mu[1],
        };
        let w = if preserved {
            1.0
        } else {
            gaussian_factor(h[0], mu[0], sigma[0], exponent)
                * gaussian_factor(h[1], mu[1], sigma[1], exponent)
        };
        weights.push(w);
        preserved_mask.push(preserved);
    }
    ReliabilityWeights {
        weights,
        reliable_cluster,
        preserved_mask,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PcosConfig {
    pub embedding: EmbeddingKind,
    pub lambda: f64,
    pub exponent: GaussianExponent,
}

impl Default for PcosConfig {
    fn default() -> Self {
        Self {
            embedding: EmbeddingKind::Theory,
            lambda: DEFAULT_LAMBDA,
            exponent: GaussianExponent::Standard,
        }
    }
}

/// Everything the separation pipeline produced for one batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcosOutcome {
    pub embedding: EmbeddingMatrix,
    pub spectral: SpectralAssignment,
    pub clusters: ClusterStats,
    pub weights: ReliabilityWeights,
}

/// Partition, score and weight an already embedded batch.
pub fn separate(
    phi: &EmbeddingMatrix,
    lambda: f64,
    exponent: GaussianExponent,
) -> Result<PcosOutcome> {
    let spectral = spectral_assign(phi)?;
    let clusters = cluster_statistics(phi, &spectral.selection)?;
    let reliable = select_reliable_cluster(&clusters, lambda)?;
    let summary = clusters.clusters[reliable].expect("selected cluster is non-empty");
    let weights = gaussian_weights(phi, reliable, &summary, exponent);
    Ok(PcosOutcome {
        embedding: phi.clone(),
        spectral,
        clusters,
        weights,
    })
}

/// Statistics, embedding, spectral partition, cluster scoring and weights.
pub fn pcos(batch: &ProbabilityBatch, config: &PcosConfig) -> Result<PcosOutcome> {
    if !config.lambda.is_finite() {
        return Err(CovarError::domain("lambda must be finite"));
    }
    let stats = compute_stats(batch);
    let phi = embed(&stats, config.embedding, batch.n_classes())?;
    separate(&phi, config.lambda, config.exponent)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn phi(cols: &[[f64; 2]]) -> EmbeddingMatrix {
        EmbeddingMatrix::new(EmbeddingKind::Theory, cols.to_vec()).unwrap()
    }

    fn sel(a: &[u8]) -> SelectionMatrix {
        SelectionMatrix::new(a.to_vec()).unwrap()
    }

    const E1: [f64; 2] = [1.0, 0.0];
    const E2: [f64; 2] = [0.0, 1.0];

    #[test]
    fn embed_hand_example() {
        let s = vec![
            PredictionStats::from_row(&[0.7, 0.2, 0.1]),
            PredictionStats::from_row(&[1.0 / 3.0; 3]),
        ];
        let t = embed(&s, EmbeddingKind::Theory, 3).unwrap();
        assert!((t.columns[0][0] - (-0.35667)).abs() < 1e-5);
        assert!((t.columns[0][1] - (-0.016667)).abs() < 1e-5);
        assert!((t.columns[1][0] + 3.0_f64.ln()).abs() < 1e-15);
        assert!(t.columns[1][1].abs() < 1e-15);

        let r = embed(&s, EmbeddingKind::Raw, 3).unwrap();
        assert_eq!(r.columns[0][0], 0.7);
        assert!((r.columns[0][1] - 0.0025).abs() < 1e-15);
    }

    #[test]
    fn embed_needs_two_predictions() {
        let s = vec![PredictionStats::from_row(&[0.7, 0.2, 0.1])];
        assert!(embed(&s, EmbeddingKind::Theory, 3).is_err());
    }

    #[test]
    fn embed_clamps_one_hot_rows() {
        let s = vec![
            PredictionStats::from_row(&[1.0, 0.0, 0.0]),
            PredictionStats::from_row(&[0.7, 0.2, 0.1]),
        ];
        let t = embed(&s, EmbeddingKind::Theory, 3).unwrap();
        assert!(t.columns[0][0] < 0.0 && t.columns[0][0] > -1e-5);
    }

    #[test]
    fn trace_objective_examples() {
        let p = phi(&[E1, E1, E2]);
        let s = sel(&[0, 0, 1]);
        assert!((trace_objective(&p, &s, false).unwrap() - 5.0).abs() < 1e-15);
        assert!((trace_objective(&p, &s, true).unwrap() - 3.0).abs() < 1e-15);

        let u = [0.3, -1.2];
        let p = phi(&[u; 6]);
        let s = sel(&[0; 6]);
        let norm2 = u[0] * u[0] + u[1] * u[1];
        assert!((trace_objective(&p, &s, false).unwrap() - 36.0 * norm2).abs() < 1e-12);
        assert!(trace_objective(&p, &s, true).is_err());

        let p = phi(&[E1, E2]);
        assert!((trace_objective(&p, &sel(&[0, 1]), true).unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn selection_matrix_rejects_bad_ids() {
        assert!(SelectionMatrix::new(vec![0, 2]).is_err());
        assert!(trace_objective(&phi(&[E1, E2]), &sel(&[0]), false).is_err());
    }

    #[test]
    fn brute_force_examples() {
        let (s, v) = brute_force_partition(&phi(&[E1, E1, E2])).unwrap();
        assert_eq!(s.assignment(), &[0, 0, 1]);
        assert!((v - 3.0).abs() < 1e-15);

        let u = [0.6, -0.8];
        let (s, v) = brute_force_partition(&phi(&[u, [-u[0], -u[1]]])).unwrap();
        assert_eq!(s.assignment(), &[0, 1]);
        assert!((v - 2.0).abs() < 1e-12);

        let (s, _) = brute_force_partition(&phi(&[u, u])).unwrap();
        assert_eq!(s.assignment(), &[0, 1]);

        // Four identical columns: every split ties, the smallest wins.
        let (s, _) = brute_force_partition(&phi(&[u; 4])).unwrap();
        assert_eq!(s.assignment(), &[0, 0, 0, 1]);

        assert!(brute_force_partition(&phi(&[E1; 21])).is_err());
    }

    #[test]
    fn spectral_hand_example() {
        let r = spectral_assign(&phi(&[E1, E1, E2])).unwrap();
        assert_eq!(r.selection.assignment(), &[0, 0, 1]);
        assert!((r.singular_values[0] - 2.0_f64.sqrt()).abs() < 1e-15);
        assert!((r.singular_values[1] - 1.0).abs() < 1e-15);
        assert!(!r.rank_deficient && !r.isotropic);
    }

    #[test]
    fn spectral_rank_one() {
        let u = [-0.2, -0.05];
        let r = spectral_assign(&phi(&[u, u, u])).unwrap();
        assert!(r.rank_deficient);
        assert_eq!(r.selection.assignment(), &[0, 0, 0]);
        // Second axis identically zero.
        let r = spectral_assign(&phi(&[[-0.1, 0.0], [-0.4, 0.0]])).unwrap();
        assert!(r.rank_deficient);
    }

    #[test]
    fn spectral_isotropic_uses_canonical_basis() {
        let r = spectral_assign(&phi(&[E1, E2])).unwrap();
        assert!(r.isotropic);
        assert_eq!(r.selection.assignment(), &[0, 1]);
    }

    #[test]
    fn spectral_rejects_zero_matrix() {
        assert!(spectral_assign(&phi(&[[0.0, 0.0]; 3])).is_err());
    }

    #[test]
    fn cluster_statistics_examples() {
        let p = phi(&[[1.0, 0.0], [3.0, 0.0], [7.0, 2.0]]);
        let st = cluster_statistics(&p, &sel(&[0, 0, 1])).unwrap();
        let c0 = st.clusters[0].unwrap();
        assert_eq!(c0.mean, [2.0, 0.0]);
        assert_eq!(c0.std, [1.0, 0.0]);
        assert_eq!(c0.size, 2);
        let c1 = st.clusters[1].unwrap();
        assert_eq!(c1.std, [0.0, 0.0]);
        assert_eq!(c1.size, 1);

        let p = phi(&[[0.5, 0.5], [0.5, 0.5]]);
        let st = cluster_statistics(&p, &sel(&[0, 1])).unwrap();
        assert_eq!(st.clusters[0], st.clusters[1]);

        let st = cluster_statistics(&p, &sel(&[0, 0])).unwrap();
        assert!(st.clusters[1].is_none());
    }

    fn summary(mean: [f64; 2], std: [f64; 2]) -> ClusterSummary {
        ClusterSummary { mean, std, size: 3 }
    }

    #[test]
    fn reliable_cluster_scoring() {
        let st = ClusterStats {
            clusters: [
                Some(summary([0.9, 0.0], [0.0, 0.1])),
                Some(summary([0.6, 0.0], [0.0, 0.0])),
            ],
        };
        // 0.9 - 0.25 * 0.1 = 0.875 vs 0.6
        assert_eq!(select_reliable_cluster(&st, 0.25).unwrap(), 0);
        // A large enough lambda flips the choice.
        assert_eq!(select_reliable_cluster(&st, 4.0).unwrap(), 1);

        let st = ClusterStats {
            clusters: [
                Some(summary([0.5, 0.0], [0.0, 0.0])),
                Some(summary([0.6, 0.0], [0.0, 9.0])),
            ],
        };
        assert_eq!(select_reliable_cluster(&st, 0.0).unwrap(), 1);

        let same = Some(summary([0.5, 0.1], [0.2, 0.3]));
        let st = ClusterStats { clusters: [same, same] };
        assert_eq!(select_reliable_cluster(&st, 0.25).unwrap(), 0);

        let st = ClusterStats { clusters: [None, same] };
        assert_eq!(select_reliable_cluster(&st, 0.25).unwrap(), 1);
    }

    #[test]
    fn gaussian_weight_examples() {
        let mu = [-0.2, -0.1];
        let sd = [0.05, 0.02];
        let rel = summary(mu, sd);
        let p = phi(&[
            mu,
            [mu[0] + sd[0], mu[1]],
            [mu[0] + 0.01, mu[1] + 0.01],
            [mu[0] - 2.0 * sd[0], mu[1] - sd[1]],
        ]);
        let w = gaussian_weights(&p, 0, &rel, GaussianExponent::Standard);
        assert_eq!(w.weights[0], 1.0);
        assert!(!w.preserved_mask[0]);
        assert!((w.weights[1] - (-0.5_f64).exp()).abs() < 1e-12);
        assert!(!w.preserved_mask[1]);
        assert!(w.preserved_mask[2]);
        assert_eq!(w.weights[2], 1.0);
        assert!((w.weights[3] - (-2.5_f64).exp()).abs() < 1e-12);

        let w = gaussian_weights(&p, 0, &rel, GaussianExponent::Quarter);
        assert!((w.weights[1] - (-0.25_f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn zero_spread_dimension_is_an_indicator() {
        let rel = summary([0.0, 0.0], [1.0, 0.0]);
        let p = phi(&[[0.5, 0.0], [-0.5, -1e-9]]);
        let w = gaussian_weights(&p, 0, &rel, GaussianExponent::Standard);
        assert!((w.weights[0] - (-0.125_f64).exp()).abs() < 1e-15);
        assert_eq!(w.weights[1], 0.0);
    }

    #[test]
    fn raw_embedding_preserves_low_variance_side() {
        let rel = summary([0.8, 0.01], [0.1, 0.005]);
        let p = EmbeddingMatrix::new(
            EmbeddingKind::Raw,
            vec![[0.9, 0.005], [0.9, 0.02], [0.7, 0.005]],
        )
        .unwrap();
        let w = gaussian_weights(&p, 0, &rel, GaussianExponent::Standard);
        assert_eq!(w.preserved_mask, vec![true, false, false]);
    }

    #[test]
    fn identical_rows_are_all_reliable() {
        let row = [0.6, 0.25, 0.1, 0.05];
        let batch = ProbabilityBatch::from_rows(&vec![row; 9]).unwrap();
        let out = pcos(&batch, &PcosConfig::default()).unwrap();
        assert!(out.spectral.rank_deficient);
        assert!(out.weights.weights.iter().all(|&w| w == 1.0));
    }

    #[test]
    fn orthogonal_pair_splits_into_singletons() {
        let out = separate(&phi(&[E1, E2]), DEFAULT_LAMBDA, GaussianExponent::Standard).unwrap();
        assert_eq!(out.spectral.selection.assignment(), &[0, 1]);
        assert_eq!(out.weights.reliable_cluster, 0);
        assert_eq!(out.weights.weights[0], 1.0);
        assert_eq!(out.weights.weights[1], 0.0);
    }
}
