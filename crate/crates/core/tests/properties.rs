//! Property-based invariants of the payout mechanism and the perturbation
//! attacks: bounded shares, exact change partitions, rank invariance under
//! monotone score transforms, and attack box/clip discipline.

mod common;

use proptest::prelude::*;

use attrisim::attribution::{AttributionMethod, ContributionMatrix};
use attrisim::compensation::{
    compensation_share, fraction_of_change, top_k_sets, TopKConfig,
};
use attrisim::data::{DataPoint, Dataset, Provenance};
use attrisim::outlier::random_perturb;

/// Scores with deliberate collisions so tie handling is always exercised.
fn score_vec(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(
        prop_oneof![
            (-1.0f64..1.0),
            (-4i32..=4).prop_map(|q| f64::from(q) / 4.0),
        ],
        len,
    )
}

fn matrix(n: usize, v: usize, values: Vec<f64>) -> ContributionMatrix {
    ContributionMatrix::new(
        AttributionMethod::GradDot,
        (0..n as u64).collect(),
        (1000..1000 + v as u64).collect(),
        values,
    )
    .expect("property fixture matrix")
}

fn k_config(k: usize) -> TopKConfig {
    TopKConfig {
        k,
        ..TopKConfig::default()
    }
}

proptest! {
    #[test]
    fn shares_are_bounded_and_counts_capped(
        n in 3usize..=25,
        v in 1usize..=8,
        k in 1usize..=25,
        take in 1usize..=25,
        values in score_vec(25 * 8),
    ) {
        prop_assume!(k <= n && take <= n);
        let tau = matrix(n, v, values[..n * v].to_vec());
        let subject: Vec<u64> = (0..take as u64).collect();
        let report = compensation_share(&tau, &subject, &k_config(k)).unwrap();
        prop_assert!((0.0..=1.0).contains(&report.share));
        for &c in &report.per_val_counts {
            prop_assert!(c <= k.min(take));
        }
    }

    #[test]
    fn the_full_pool_captures_every_slot(
        n in 3usize..=25,
        v in 1usize..=8,
        k in 1usize..=25,
        values in score_vec(25 * 8),
    ) {
        prop_assume!(k <= n);
        let tau = matrix(n, v, values[..n * v].to_vec());
        let everyone: Vec<u64> = (0..n as u64).collect();
        let report = compensation_share(&tau, &everyone, &k_config(k)).unwrap();
        prop_assert_eq!(report.share, 1.0);
    }

    #[test]
    fn growing_the_subject_never_shrinks_the_share(
        n in 3usize..=25,
        v in 1usize..=8,
        k in 1usize..=25,
        take in 1usize..=24,
        values in score_vec(25 * 8),
    ) {
        prop_assume!(k <= n && take < n);
        let tau = matrix(n, v, values[..n * v].to_vec());
        let smaller: Vec<u64> = (0..take as u64).collect();
        let larger: Vec<u64> = (0..=take as u64).collect();
        let a = compensation_share(&tau, &smaller, &k_config(k)).unwrap();
        let b = compensation_share(&tau, &larger, &k_config(k)).unwrap();
        prop_assert!(b.share >= a.share);
    }

    #[test]
    fn change_partition_is_exact(
        n in 3usize..=25,
        v in 1usize..=8,
        k in 1usize..=25,
        take in 1usize..=25,
        before in score_vec(25 * 8),
        after in score_vec(25 * 8),
    ) {
        prop_assume!(k <= n && take <= n);
        let a = matrix(n, v, before[..n * v].to_vec());
        let b = matrix(n, v, after[..n * v].to_vec());
        let subject: Vec<u64> = (0..take as u64).collect();
        let report = fraction_of_change(&a, &b, &subject, &k_config(k)).unwrap();
        prop_assert_eq!(
            report.more_count + report.tied_count + report.fewer_count,
            v
        );
        prop_assert_eq!(report.more + report.tied + report.fewer, 1.0);
        prop_assert!(report.more >= 0.0 && report.tied >= 0.0 && report.fewer >= 0.0);
    }

    #[test]
    fn comparing_a_matrix_with_itself_ties_everywhere(
        n in 3usize..=25,
        v in 1usize..=8,
        k in 1usize..=25,
        values in score_vec(25 * 8),
    ) {
        prop_assume!(k <= n);
        let tau = matrix(n, v, values[..n * v].to_vec());
        let report = fraction_of_change(&tau, &tau, &[0, 1, 2], &k_config(k)).unwrap();
        prop_assert_eq!(report.tied, 1.0);
        prop_assert_eq!((report.more_count, report.fewer_count), (0, 0));
    }

    #[test]
    fn rankings_ignore_increasing_affine_transforms(
        n in 3usize..=25,
        v in 1usize..=8,
        k in 1usize..=25,
        scale in 0.1f64..10.0,
        shift in -5.0f64..5.0,
        values in score_vec(25 * 8),
    ) {
        prop_assume!(k <= n);
        let raw = values[..n * v].to_vec();
        let mapped: Vec<f64> = raw.iter().map(|x| scale * x + shift).collect();
        let sets_raw = top_k_sets(&matrix(n, v, raw), &k_config(k)).unwrap();
        let sets_mapped = top_k_sets(&matrix(n, v, mapped), &k_config(k)).unwrap();
        prop_assert_eq!(sets_raw, sets_mapped);
    }

    #[test]
    fn random_perturbation_respects_the_budget_and_the_clip_range(
        rows in prop::collection::vec(
            (prop::collection::vec(0.0f64..=1.0, 4), 0usize..2),
            1..20,
        ),
        eps in 0.0f64..0.3,
        seed in 0u64..1000,
    ) {
        let points: Vec<DataPoint> = rows
            .iter()
            .enumerate()
            .map(|(i, (features, label))| DataPoint {
                id: i as u64,
                label: *label,
                provenance: Provenance::Adversary,
                features: features.clone(),
            })
            .collect();
        let z = Dataset::new(4, 2, points).unwrap();
        let moved = random_perturb(&z, eps, seed).unwrap();
        for (a, b) in z.points().iter().zip(moved.points()) {
            prop_assert_eq!(a.id, b.id);
            prop_assert_eq!(a.label, b.label);
            prop_assert_eq!(a.provenance, b.provenance);
            for (x, y) in a.features.iter().zip(&b.features) {
                prop_assert!(*y >= (x - eps).max(0.0) - 1e-12);
                prop_assert!(*y <= (x + eps).min(1.0) + 1e-12);
            }
        }
    }
}
