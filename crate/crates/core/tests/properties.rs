mod common;

use proptest::prelude::*;

use covar::baseline::{ece, threshold_select, ThresholdPolicy};
use covar::decomposition::{decompose_batch, decompose_sample, g_coefficient, EpsilonPolicy};
use covar::io::{self, MatrixFormat};
use covar::pcos::{self, EmbeddingKind, EmbeddingMatrix, PcosConfig};
use covar::stats::argmax;
use covar::summation;
use covar::{compute_stats, exact_ce, IdealDistribution, PredictionStats, ProbabilityBatch};

fn simplex_row(k: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(1e-6f64..1.0, k).prop_map(|w| {
        let total: f64 = w.iter().sum();
        w.into_iter().map(|x| x / total).collect()
    })
}

fn batch(max_n: usize) -> impl Strategy<Value = ProbabilityBatch> {
    (2usize..8).prop_flat_map(move |k| {
        prop::collection::vec(simplex_row(k), 1..max_n)
            .prop_map(|rows| ProbabilityBatch::from_rows(&rows).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn stats_are_consistent(row in (2usize..12).prop_flat_map(simplex_row)) {
        let s = PredictionStats::from_row(&row);
        let (k, p) = argmax(&row);
        prop_assert_eq!(s.max_class, k);
        prop_assert_eq!(s.max_conf, p);
        prop_assert!(s.rcv >= 0.0);
        prop_assert!(s.rho >= 0.0);
        prop_assert!(s.residual_mean <= s.max_conf + 1e-15);
        let dev_sum: f64 = s.deviations.iter().sum();
        prop_assert!(dev_sum.abs() <= 1e-12);
    }

    #[test]
    fn residual_permutation_leaves_stats_unchanged(row in (3usize..10).prop_flat_map(simplex_row)) {
        let s = PredictionStats::from_row(&row);
        let mut reordered = row.clone();
        let top = s.max_class;
        let last = reordered.len() - 1;
        reordered.swap(top, last);
        reordered[..last].reverse();
        let t = PredictionStats::from_row(&reordered);
        prop_assert_eq!(s.max_conf, t.max_conf);
        prop_assert!((s.rcv - t.rcv).abs() <= 1e-15 * s.rcv.max(1e-300) + 1e-300);
    }

    #[test]
    fn cross_entropy_is_minimised_by_matching_distribution(row in (2usize..8).prop_flat_map(simplex_row)) {
        let s = PredictionStats::from_row(&row);
        let q = IdealDistribution::adaptive(&s).unwrap();
        let self_ce = exact_ce(&q.to_vec(), &q).unwrap();
        prop_assert!(exact_ce(&row, &q).unwrap() >= self_ce - 1e-12);
    }

    #[test]
    fn remainder_is_certified_whenever_assumption_holds(row in (2usize..12).prop_flat_map(simplex_row)) {
        let s = PredictionStats::from_row(&row);
        prop_assume!(s.assumption_holds());
        for policy in [EpsilonPolicy::Adaptive, EpsilonPolicy::Fixed(0.01)] {
            let d = decompose_sample(&s, policy).unwrap();
            prop_assert!(d.middle_term >= 0.0);
            // The bound is tight to leading order as x -> 0, so allow rounding.
            prop_assert!(d.remainder_actual.abs() <= d.remainder_bound.unwrap() * (1.0 + 1e-12));
        }
    }

    #[test]
    fn g_grows_with_confidence(k in 2usize..30, a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let lo = 1.0 / k as f64 + (1.0 - 1.0 / k as f64) * a.min(b) * 0.999;
        let hi = 1.0 / k as f64 + (1.0 - 1.0 / k as f64) * a.max(b) * 0.999;
        let g_lo = g_coefficient(lo, k, EpsilonPolicy::Adaptive).unwrap();
        let g_hi = g_coefficient(hi, k, EpsilonPolicy::Adaptive).unwrap();
        prop_assert!(g_hi >= g_lo);
        prop_assert!(g_lo > 0.0);
    }

    #[test]
    fn batch_decomposition_is_order_independent_up_to_rounding(b in batch(40)) {
        let n = b.n_samples();
        let order: Vec<usize> = (0..n).rev().collect();
        let x = decompose_batch(&compute_stats(&b), EpsilonPolicy::Adaptive).unwrap();
        let y = decompose_batch(&compute_stats(&b.permuted(&order)), EpsilonPolicy::Adaptive).unwrap();
        prop_assert!((x.batch_ce - y.batch_ce).abs() <= 1e-12 * x.batch_ce.abs().max(1.0));
        prop_assert!((x.mean_gv - y.mean_gv).abs() <= 1e-12 * x.mean_gv.abs().max(1e-300));
    }

    #[test]
    fn pcos_weights_are_bounded(b in batch(60)) {
        prop_assume!(b.n_samples() >= 2);
        for embedding in [EmbeddingKind::Theory, EmbeddingKind::Raw] {
            let config = PcosConfig { embedding, ..PcosConfig::default() };
            match pcos::pcos(&b, &config) {
                Ok(o) => {
                    for (&w, &p) in o.weights.weights.iter().zip(&o.weights.preserved_mask) {
                        prop_assert!((0.0..=1.0).contains(&w));
                        if p {
                            prop_assert_eq!(w, 1.0);
                        }
                    }
                    let sizes = o.spectral.selection.cluster_sizes();
                    prop_assert_eq!(sizes[0] + sizes[1], b.n_samples());
                }
                // An all-zero embedding (every row uniform under the theory map) is refused.
                Err(_) => prop_assert!(compute_stats(&b).iter().all(|s| s.rcv == 0.0)),
            }
        }
    }

    #[test]
    fn spectral_assignment_is_sign_invariant(cols in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 2..30)) {
        let cols: Vec<[f64; 2]> = cols.into_iter().map(|(a, b)| [a, b]).collect();
        prop_assume!(cols.iter().any(|c| c[0] != 0.0 || c[1] != 0.0));
        let phi = EmbeddingMatrix::new(EmbeddingKind::Theory, cols).unwrap();
        let a = pcos::spectral_assign(&phi).unwrap();
        let b = pcos::spectral_assign(&phi.scaled(-1.0)).unwrap();
        prop_assert_eq!(a.selection, b.selection);
    }

    #[test]
    fn threshold_mask_is_monotone(b in batch(50), t1 in 0.0f64..=1.0, t2 in 0.0f64..=1.0) {
        let (lo, hi) = (t1.min(t2), t1.max(t2));
        let m_lo = threshold_select(&b, &ThresholdPolicy::new(lo).unwrap()).mask;
        let m_hi = threshold_select(&b, &ThresholdPolicy::new(hi).unwrap()).mask;
        prop_assert!(m_hi.iter().zip(&m_lo).all(|(&h, &l)| !h || l));
    }

    #[test]
    fn ece_is_permutation_invariant_and_bounded(
        data in prop::collection::vec((0.0f64..=1.0, any::<bool>()), 1..200),
        bins in 1usize..30,
    ) {
        let (conf, correct): (Vec<f64>, Vec<bool>) = data.iter().cloned().unzip();
        let r = ece(&conf, &correct, bins).unwrap();
        prop_assert!((0.0..=1.0).contains(&r.ece));
        prop_assert_eq!(r.bins.iter().map(|b| b.count).sum::<usize>(), conf.len());
        let rev_c: Vec<f64> = conf.iter().rev().cloned().collect();
        let rev_k: Vec<bool> = correct.iter().rev().cloned().collect();
        let s = ece(&rev_c, &rev_k, bins).unwrap();
        prop_assert!((r.ece - s.ece).abs() <= 1e-12);
    }

    #[test]
    fn matrix_files_round_trip_bitwise(b in batch(30)) {
        for format in [MatrixFormat::Csv, MatrixFormat::Binary] {
            let bytes = io::encode_matrix(&b, format).unwrap();
            let back = io::decode_matrix(&bytes, format).unwrap();
            let same = back.values().iter().zip(b.values()).all(|(x, y)| x.to_bits() == y.to_bits());
            prop_assert!(same);
        }
    }

    #[test]
    fn truncated_binary_is_rejected(b in batch(10), cut in 1usize..64) {
        let bytes = io::encode_binary(&b).unwrap();
        let cut = cut.min(bytes.len());
        prop_assert!(io::decode_binary(&bytes[..bytes.len() - cut]).is_err());
    }

    #[test]
    fn compensated_mean_of_constant_is_exact(x in -1e6f64..1e6, n in 1usize..500) {
        prop_assert_eq!(summation::mean(&vec![x; n]), x);
    }
}
