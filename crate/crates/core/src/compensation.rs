//! Top-k reward assignment over contribution scores.
//!
//! A fixed reward pool is split evenly across the `k` highest-scoring
//! training points of every validation column. [`compensation_share`] reports
//! the fraction of that pool captured by a chosen subset of training points,
//! and [`fraction_of_change`] summarizes how per-column capture counts moved
//! between two score matrices over the same validation set. Everything here
//! is rank-based: only the ordering of scores within a column matters, never
//! their magnitudes.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::attribution::ContributionMatrix;
use crate::error::{CoreError, Result};

/// Deterministic ordering of equal scores at the top-k boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TiePolicy {
    /// Equal scores rank by ascending training id, so reruns and reimplementations
    /// agree on the winning set.
    #[default]
    SmallerId,
}

/// Selection parameters for the top-k reward sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopKConfig {
    /// Number of training points rewarded per validation column.
    pub k: usize,
    /// How boundary ties are broken.
    pub tie_policy: TiePolicy,
}

impl Default for TopKConfig {
    fn default() -> Self {
        TopKConfig {
            k: 20,
            tie_policy: TiePolicy::SmallerId,
        }
    }
}

impl TopKConfig {
    /// Checks that `k` selects a non-empty strict-or-full subset of the
    /// matrix rows: `1 ≤ k ≤ n_train`.
    pub fn validate_against(&self, tau: &ContributionMatrix) -> Result<()> {
        if self.k == 0 || self.k > tau.n_train() {
            return Err(CoreError::Param(format!(
                "top-k size {} out of range for {} training rows",
                self.k,
                tau.n_train()
            )));
        }
        Ok(())
    }
}

/// Pool capture summary for one score matrix and one set of training ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompensationReport {
    /// Captured fraction of the total pool: `Σ per_val_counts / (k · n_val)`.
    pub share: f64,
    /// How many of the chosen ids made each validation column's top-k,
    /// ordered like the matrix's validation ids.
    pub per_val_counts: Vec<usize>,
    /// Selection parameters the counts were computed under.
    pub config: TopKConfig,
}

/// Per-column movement summary between two score matrices.
///
/// The three counts partition the validation columns exactly:
/// `more_count + tied_count + fewer_count == n_val`. `more` and `tied` are
/// the rounded quotients of their counts over `n_val`; `fewer` is derived
/// as the exact complement `1.0 - (more + tied)` so that the fractional
/// triple always sums to `1.0` exactly in that evaluation order. The
/// derivation moves `fewer` away from `fewer_count / n_val` by at most one
/// part in 2⁵³ and can never make it negative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangeReport {
    /// Fraction of columns where the chosen ids gained top-k slots.
    pub more: f64,
    /// Fraction of columns with an unchanged slot count.
    pub tied: f64,
    /// Fraction of columns where the chosen ids lost top-k slots.
    pub fewer: f64,
    /// Column counts behind the fractions, exact by construction.
    pub more_count: usize,
    pub tied_count: usize,
    pub fewer_count: usize,
    /// Number of validation columns compared.
    pub n_val: usize,
}

/// Returns the indices of the `k` highest entries of `col`, ordered by
/// descending value with equal values ranked by ascending id.
fn top_k_indices(col: &[f64], ids: &[u64], cfg: &TopKConfig) -> Vec<usize> {
    let TiePolicy::SmallerId = cfg.tie_policy;
    let mut order: Vec<usize> = (0..col.len()).collect();
    order.sort_unstable_by(|&a, &b| {
        col[b]
            .total_cmp(&col[a])
            .then_with(|| ids[a].cmp(&ids[b]))
    });
    order.truncate(cfg.k);
    order
}

/// Computes the rewarded id set of every validation column: the `k`
/// training ids with the highest scores, ties broken per the config.
pub fn top_k_sets(tau: &ContributionMatrix, cfg: &TopKConfig) -> Result<Vec<BTreeSet<u64>>> {
    cfg.validate_against(tau)?;
    let ids = tau.train_ids();
    Ok((0..tau.n_val())
        .map(|j| {
            top_k_indices(&tau.column(j), ids, cfg)
                .into_iter()
                .map(|i| ids[i])
                .collect()
        })
        .collect())
}

/// Checks that every queried id is a training row of `tau`, returning the
/// deduplicated set.
fn checked_id_set(tau: &ContributionMatrix, ids: &[u64]) -> Result<BTreeSet<u64>> {
    let train: BTreeSet<u64> = tau.train_ids().iter().copied().collect();
    let set: BTreeSet<u64> = ids.iter().copied().collect();
    if let Some(missing) = set.iter().find(|id| !train.contains(id)) {
        return Err(CoreError::Param(format!(
            "id {missing} is not a training row of the contribution matrix"
        )));
    }
    Ok(set)
}

/// Per-column count of `subject` ids inside the top-k set.
fn per_column_counts(
    tau: &ContributionMatrix,
    subject: &BTreeSet<u64>,
    cfg: &TopKConfig,
) -> Result<Vec<usize>> {
    Ok(top_k_sets(tau, cfg)?
        .iter()
        .map(|set| set.intersection(subject).count())
        .collect())
}

/// Computes the pool fraction captured by `subject_ids`: the number of
/// top-k slots they occupy across all validation columns, over the `k · n_val`
/// slots available.
pub fn compensation_share(
    tau: &ContributionMatrix,
    subject_ids: &[u64],
    cfg: &TopKConfig,
) -> Result<CompensationReport> {
    if tau.n_val() == 0 {
        return Err(CoreError::Param(
            "compensation share needs at least one validation column".into(),
        ));
    }
    let subject = checked_id_set(tau, subject_ids)?;
    let per_val_counts = per_column_counts(tau, &subject, cfg)?;
    let total: usize = per_val_counts.iter().sum();
    let share = total as f64 / (cfg.k * tau.n_val()) as f64;
    Ok(CompensationReport {
        share,
        per_val_counts,
        config: *cfg,
    })
}

/// Compares per-column top-k capture counts of `subject_ids` before and
/// after, over identical validation id lists.
pub fn fraction_of_change(
    tau_orig: &ContributionMatrix,
    tau_manip: &ContributionMatrix,
    subject_ids: &[u64],
    cfg: &TopKConfig,
) -> Result<ChangeReport> {
    if tau_orig.val_ids() != tau_manip.val_ids() {
        return Err(CoreError::DimMismatch(
            "change comparison needs identical validation id lists".into(),
        ));
    }
    if tau_orig.n_val() == 0 {
        return Err(CoreError::Param(
            "change comparison needs at least one validation column".into(),
        ));
    }
    let subject_orig = checked_id_set(tau_orig, subject_ids)?;
    let subject_manip = checked_id_set(tau_manip, subject_ids)?;
    let before = per_column_counts(tau_orig, &subject_orig, cfg)?;
    let after = per_column_counts(tau_manip, &subject_manip, cfg)?;
    let (mut more_count, mut tied_count, mut fewer_count) = (0usize, 0usize, 0usize);
    for (b, a) in before.iter().zip(&after) {
        match a.cmp(b) {
            std::cmp::Ordering::Greater => more_count += 1,
            std::cmp::Ordering::Equal => tied_count += 1,
            std::cmp::Ordering::Less => fewer_count += 1,
        }
    }
    let n_val = tau_orig.n_val();
    let more = more_count as f64 / n_val as f64;
    let tied = tied_count as f64 / n_val as f64;
    // Independently rounded quotients need not sum to 1.0 (1/6 + 4/6 + 1/6
    // misses it by one ulp); the complement form restores the exact
    // partition identity.
    let fewer = 1.0 - (more + tied);
    Ok(ChangeReport {
        more,
        tied,
        fewer,
        more_count,
        tied_count,
        fewer_count,
        n_val,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attribution::AttributionMethod;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn matrix(train_ids: Vec<u64>, val_ids: Vec<u64>, values: Vec<f64>) -> ContributionMatrix {
        ContributionMatrix::new(AttributionMethod::GradDot, train_ids, val_ids, values).unwrap()
    }

    fn random_matrix(n: usize, v: usize, seed: u64) -> ContributionMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values: Vec<f64> = (0..n * v).map(|_| rng.gen_range(-1.0..1.0)).collect();
        matrix((0..n as u64).collect(), (100..100 + v as u64).collect(), values)
    }

    /// Obviously-correct selection: repeatedly scan for the best remaining
    /// entry instead of sorting.
    fn top_k_by_repeated_max(col: &[f64], ids: &[u64], k: usize) -> BTreeSet<u64> {
        let mut remaining: Vec<usize> = (0..col.len()).collect();
        let mut out = BTreeSet::new();
        for _ in 0..k {
            let (pos, &best) = remaining
                .iter()
                .enumerate()
                .max_by(|(_, &a), (_, &b)| {
                    col[a]
                        .total_cmp(&col[b])
                        .then_with(|| ids[b].cmp(&ids[a]))
                })
                .unwrap();
            out.insert(ids[best]);
            remaining.remove(pos);
        }
        out
    }

    #[test]
    fn k_equals_rows_selects_everything() {
        let m = random_matrix(7, 3, 1);
        let cfg = TopKConfig {
            k: 7,
            ..TopKConfig::default()
        };
        for set in top_k_sets(&m, &cfg).unwrap() {
            assert_eq!(set.len(), 7);
            assert!(m.train_ids().iter().all(|id| set.contains(id)));
        }
    }

    #[test]
    fn k_one_selects_column_maximum() {
        let m = matrix(vec![10, 11, 12], vec![0], vec![5.0, 3.0, 9.0]);
        let cfg = TopKConfig {
            k: 1,
            ..TopKConfig::default()
        };
        let sets = top_k_sets(&m, &cfg).unwrap();
        assert_eq!(sets[0], BTreeSet::from([12]));
    }

    #[test]
    fn ties_resolve_to_smaller_id() {
        let m = matrix(vec![4, 2, 9], vec![0], vec![1.0, 1.0, 1.0]);
        let cfg = TopKConfig {
            k: 2,
            ..TopKConfig::default()
        };
        let sets = top_k_sets(&m, &cfg).unwrap();
        assert_eq!(sets[0], BTreeSet::from([2, 4]));
    }

    #[test]
    fn matches_repeated_max_oracle() {
        let m = random_matrix(50, 10, 2);
        for k in [1, 5, 20] {
            let cfg = TopKConfig {
                k,
                ..TopKConfig::default()
            };
            let sets = top_k_sets(&m, &cfg).unwrap();
            for (j, set) in sets.iter().enumerate() {
                let oracle = top_k_by_repeated_max(&m.column(j), m.train_ids(), k);
                assert_eq!(*set, oracle, "column {j} k {k}");
            }
        }
    }

    #[test]
    fn share_is_one_when_subject_owns_every_top_slot() {
        let m = matrix(
            vec![1, 2, 3],
            vec![0, 1],
            vec![9.0, 8.0, 1.0, 2.0, 0.0, 1.0],
        );
        let cfg = TopKConfig {
            k: 1,
            ..TopKConfig::default()
        };
        let report = compensation_share(&m, &[1], &cfg).unwrap();
        assert_eq!(report.share, 1.0);
        assert_eq!(report.per_val_counts, vec![1, 1]);
    }

    #[test]
    fn share_is_zero_when_subject_never_ranks() {
        let m = matrix(
            vec![1, 2, 3],
            vec![0, 1],
            vec![9.0, 8.0, 1.0, 2.0, 0.0, 1.0],
        );
        let cfg = TopKConfig {
            k: 2,
            ..TopKConfig::default()
        };
        let report = compensation_share(&m, &[3], &cfg).unwrap();
        assert_eq!(report.share, 0.0);
        assert_eq!(report.per_val_counts, vec![0, 0]);
    }

    #[test]
    fn share_matches_double_loop_enumeration() {
        let m = random_matrix(100, 20, 3);
        let subject: Vec<u64> = (0..100).step_by(10).collect();
        let cfg = TopKConfig {
            k: 5,
            ..TopKConfig::default()
        };
        let report = compensation_share(&m, &subject, &cfg).unwrap();
        let sets = top_k_sets(&m, &cfg).unwrap();
        let mut hits = 0usize;
        for id in &subject {
            for set in &sets {
                if set.contains(id) {
                    hits += 1;
                }
            }
        }
        let expected = hits as f64 / (cfg.k * m.n_val()) as f64;
        assert_eq!(report.share, expected);
        assert!(report.share <= (subject.len() as f64 / cfg.k as f64).min(1.0));
    }

    #[test]
    fn unknown_ids_and_bad_k_are_rejected() {
        let m = random_matrix(5, 2, 4);
        let cfg = TopKConfig {
            k: 2,
            ..TopKConfig::default()
        };
        assert!(matches!(
            compensation_share(&m, &[99], &cfg),
            Err(CoreError::Param(_))
        ));
        for k in [0, 6] {
            let bad = TopKConfig {
                k,
                ..TopKConfig::default()
            };
            assert!(matches!(
                top_k_sets(&m, &bad),
                Err(CoreError::Param(_))
            ));
        }
    }

    #[test]
    fn identical_matrices_are_all_tied() {
        let m = random_matrix(30, 7, 5);
        let cfg = TopKConfig {
            k: 4,
            ..TopKConfig::default()
        };
        let report = fraction_of_change(&m, &m, &[0, 1, 2], &cfg).unwrap();
        assert_eq!(report.tied, 1.0);
        assert_eq!(report.more, 0.0);
        assert_eq!(report.fewer, 0.0);
        assert_eq!(report.tied_count, 7);
    }

    #[test]
    fn promoting_a_point_everywhere_reports_all_more() {
        let n = 10;
        let v = 4;
        let base = random_matrix(n, v, 6);
        // Subject id 9 starts at the bottom of every column and jumps to the
        // top of every column after manipulation.
        let mut lo = base.values().to_vec();
        let mut hi = lo.clone();
        for j in 0..v {
            lo[9 * v + j] = -100.0;
            hi[9 * v + j] = 100.0;
        }
        let ids: Vec<u64> = (0..n as u64).collect();
        let vids: Vec<u64> = (100..100 + v as u64).collect();
        let orig = matrix(ids.clone(), vids.clone(), lo);
        let manip = matrix(ids, vids, hi);
        let cfg = TopKConfig {
            k: 3,
            ..TopKConfig::default()
        };
        let report = fraction_of_change(&orig, &manip, &[9], &cfg).unwrap();
        assert_eq!(report.more, 1.0);
        assert_eq!(report.more_count, v);
    }

    #[test]
    fn change_counts_match_per_column_oracle() {
        let a = random_matrix(40, 12, 7);
        let b = random_matrix(40, 12, 8);
        let subject: Vec<u64> = vec![0, 3, 17, 25, 39];
        let cfg = TopKConfig {
            k: 6,
            ..TopKConfig::default()
        };
        let report = fraction_of_change(&a, &b, &subject, &cfg).unwrap();
        let sets_a = top_k_sets(&a, &cfg).unwrap();
        let sets_b = top_k_sets(&b, &cfg).unwrap();
        let (mut more, mut tied, mut fewer) = (0, 0, 0);
        for j in 0..12 {
            let ca = subject.iter().filter(|id| sets_a[j].contains(id)).count();
            let cb = subject.iter().filter(|id| sets_b[j].contains(id)).count();
            match cb.cmp(&ca) {
                std::cmp::Ordering::Greater => more += 1,
                std::cmp::Ordering::Equal => tied += 1,
                std::cmp::Ordering::Less => fewer += 1,
            }
        }
        assert_eq!(
            (report.more_count, report.tied_count, report.fewer_count),
            (more, tied, fewer)
        );
        assert_eq!(report.more_count + report.tied_count + report.fewer_count, 12);
    }

    #[test]
    fn fraction_triple_sums_to_one_even_when_quotients_round() {
        // Counts (1, 4, 1) over 6 columns: the three independently rounded
        // sixths miss 1.0 by an ulp, so this pins the complement derivation.
        let ids: Vec<u64> = vec![0, 1, 2];
        let vids: Vec<u64> = (10..16).collect();
        let mut lo = vec![0.0; 18];
        let mut hi = vec![0.0; 18];
        for j in 0..6 {
            // Row 0 is the subject; rows 1-2 fill the rest of each column.
            lo[j] = if j == 0 { 2.0 } else { -2.0 };
            hi[j] = if j == 1 { 2.0 } else { -2.0 };
            lo[6 + j] = 1.0;
            hi[6 + j] = 1.0;
        }
        let orig = matrix(ids.clone(), vids.clone(), lo);
        let manip = matrix(ids, vids, hi);
        let cfg = TopKConfig {
            k: 1,
            ..TopKConfig::default()
        };
        let report = fraction_of_change(&orig, &manip, &[0], &cfg).unwrap();
        assert_eq!(
            (report.more_count, report.tied_count, report.fewer_count),
            (1, 4, 1)
        );
        assert_eq!(report.more + report.tied + report.fewer, 1.0);
        assert!(report.fewer >= 0.0);
    }

    #[test]
    fn mismatched_validation_ids_are_rejected() {
        let a = random_matrix(10, 3, 9);
        let b = matrix(
            (0..10).collect(),
            vec![7, 8, 9],
            a.values().to_vec(),
        );
        let cfg = TopKConfig {
            k: 2,
            ..TopKConfig::default()
        };
        assert!(matches!(
            fraction_of_change(&a, &b, &[0], &cfg),
            Err(CoreError::DimMismatch(_))
        ));
    }

    #[test]
    fn monotone_transforms_leave_everything_unchanged() {
        let m = random_matrix(25, 6, 10);
        let warped_values: Vec<f64> = m.values().iter().map(|v| v.atan() + 2.0).collect();
        let warped = matrix(
            m.train_ids().to_vec(),
            m.val_ids().to_vec(),
            warped_values,
        );
        let cfg = TopKConfig {
            k: 5,
            ..TopKConfig::default()
        };
        let subject: Vec<u64> = vec![1, 4, 20];
        assert_eq!(
            top_k_sets(&m, &cfg).unwrap(),
            top_k_sets(&warped, &cfg).unwrap()
        );
        assert_eq!(
            compensation_share(&m, &subject, &cfg).unwrap(),
            compensation_share(&warped, &subject, &cfg).unwrap()
        );
        let change = fraction_of_change(&m, &warped, &subject, &cfg).unwrap();
        assert_eq!(change.tied, 1.0);
    }
}
