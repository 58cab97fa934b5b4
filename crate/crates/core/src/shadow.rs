//! Surrogate-model feature manipulation.
//!
//! An adversary who cannot see the deployed model trains its own ensemble of
//! stand-in models on public data mixed with its own points
//! ([`train_shadow_ensemble`]), scores how much of the reward pool those
//! points would capture ([`shadow_share`]), and nudges the point features up
//! the gradient of a smooth proxy for that share ([`shadow_attack`]). The
//! proxy ([`surrogate_objective`]) replaces the hard top-k count with the sum
//! of gradient-alignment scores against the stand-in validation set, which
//! makes it differentiable in the features. The stand-in models are *not*
//! retrained between ascent steps; the attack treats them as frozen.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attribution::{
    grad_dot, influence_function, trak, AttributionMethod, CgConfig, ContributionMatrix,
    TrakConfig,
};
use crate::compensation::{compensation_share, TopKConfig};
use crate::data::Dataset;
use crate::error::{CoreError, Result};
use crate::model::{train, Architecture, ModelParams, TrainConfig};

/// Frozen stand-in models plus the data views they were built from.
#[derive(Debug, Clone)]
pub struct ShadowEnsemble {
    /// One trained model per member, in member order.
    pub models: Vec<ModelParams>,
    /// Each member's full training set: its sampled pool subset plus the
    /// adversary points. Kept whole so scores can be recomputed later with
    /// candidate features swapped in for the adversary ids.
    pub member_sets: Vec<Dataset>,
    /// Held-out points carved from the pool before any member sampling;
    /// every member scores against this same set.
    pub shadow_val: Dataset,
}

impl ShadowEnsemble {
    /// Number of member models.
    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    /// Training ids of one member, in dataset order.
    pub fn member_train_ids(&self, i: usize) -> Vec<u64> {
        self.member_sets[i].ids()
    }
}

/// Size limits of one feature-ascent run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackBudget {
    /// Hard per-coordinate cap on the total perturbation.
    pub eps_inf: f64,
    /// Per-iteration step applied along the gradient sign.
    pub step_size: f64,
    /// Number of ascent iterations.
    pub iterations: usize,
}

impl Default for AttackBudget {
    fn default() -> Self {
        AttackBudget {
            eps_inf: 0.1,
            step_size: 0.01,
            iterations: 10,
        }
    }
}

impl AttackBudget {
    pub fn validate(&self) -> Result<()> {
        if !self.eps_inf.is_finite() || self.eps_inf <= 0.0 {
            return Err(CoreError::Param(format!(
                "attack budget eps_inf must be positive and finite, got {}",
                self.eps_inf
            )));
        }
        if !self.step_size.is_finite() || self.step_size < 0.0 {
            return Err(CoreError::Param(format!(
                "attack step size must be non-negative and finite, got {}",
                self.step_size
            )));
        }
        if self.iterations == 0 {
            return Err(CoreError::Param(
                "attack needs at least one iteration".into(),
            ));
        }
        Ok(())
    }
}

/// Builds `m` stand-in models. A validation slice of `val_size` points is
/// carved from `pool` first; each member then trains on `subset_size` points
/// sampled from the remainder, concatenated with all of `z`. Sampling and
/// training are reproducible from `seed`.
#[allow(clippy::too_many_arguments)]
pub fn train_shadow_ensemble(
    pool: &Dataset,
    z: &Dataset,
    m: usize,
    subset_size: usize,
    val_size: usize,
    arch: &Architecture,
    tcfg: &TrainConfig,
    seed: u64,
) -> Result<ShadowEnsemble> {
    if m == 0 {
        return Err(CoreError::Param("shadow ensemble needs m ≥ 1".into()));
    }
    if subset_size == 0 || val_size == 0 {
        return Err(CoreError::Param(
            "shadow subset and validation sizes must be positive".into(),
        ));
    }
    if z.is_empty() {
        return Err(CoreError::Param(
            "shadow ensemble needs at least one adversary point".into(),
        ));
    }
    if subset_size + val_size > pool.len() {
        return Err(CoreError::Param(format!(
            "pool of {} points cannot supply {} validation plus {} member points",
            pool.len(),
            val_size,
            subset_size
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut val_idx = rand::seq::index::sample(&mut rng, pool.len(), val_size).into_vec();
    val_idx.sort_unstable();
    let shadow_val = pool.subset_by_indices(&val_idx)?;
    let taken: std::collections::HashSet<usize> = val_idx.iter().copied().collect();
    let remainder: Vec<usize> = (0..pool.len()).filter(|i| !taken.contains(i)).collect();

    let mut member_sets = Vec::with_capacity(m);
    for _ in 0..m {
        let mut pick = rand::seq::index::sample(&mut rng, remainder.len(), subset_size).into_vec();
        pick.sort_unstable();
        let chosen: Vec<usize> = pick.into_iter().map(|i| remainder[i]).collect();
        member_sets.push(pool.subset_by_indices(&chosen)?.union(z)?);
    }
    let models: Vec<Result<ModelParams>> = member_sets
        .par_iter()
        .map(|set| train(arch, set, tcfg))
        .collect();
    let models = models.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(ShadowEnsemble {
        models,
        member_sets,
        shadow_val,
    })
}

/// One member's training set with the adversary rows' features replaced by
/// the candidate's. Ids and labels must line up exactly.
fn member_set_with_candidate(member: &Dataset, z: &Dataset) -> Result<Dataset> {
    let features = member
        .points()
        .iter()
        .map(|p| match z.index_of(p.id) {
            Some(i) => {
                let cand = z.point(i);
                if cand.label != p.label {
                    return Err(CoreError::Param(format!(
                        "candidate point {} changed its label",
                        p.id
                    )));
                }
                Ok(cand.features.clone())
            }
            None => Ok(p.features.clone()),
        })
        .collect::<Result<Vec<_>>>()?;
    member.with_features(features)
}

fn member_matrix(
    set: &Dataset,
    model: &ModelParams,
    val: &Dataset,
    method: AttributionMethod,
) -> Result<ContributionMatrix> {
    match method {
        AttributionMethod::GradDot => grad_dot(set, model, val),
        AttributionMethod::InfluenceFunction => {
            influence_function(set, model, val, &CgConfig::default_for(&model.arch))
        }
        AttributionMethod::Trak => trak(set, std::slice::from_ref(model), val, &TrakConfig::default()),
        AttributionMethod::DataShapley => Err(CoreError::Param(
            "retraining-based scores cannot be recomputed against frozen stand-in models".into(),
        )),
    }
}

/// Mean over members of the reward-pool fraction the ids of `z` capture on
/// that member's score matrix: counts of `z` rows inside each validation
/// column's top-k, normalized by `m · k · |shadow_val|`.
///
/// `z` may carry perturbed features; they are swapped into each member's
/// training set by id before scoring, while the frozen member models are
/// used as-is.
pub fn shadow_share(
    z: &Dataset,
    ens: &ShadowEnsemble,
    k: usize,
    method: AttributionMethod,
) -> Result<f64> {
    let cfg = TopKConfig {
        k,
        ..TopKConfig::default()
    };
    let z_ids = z.ids();
    let mut total = 0.0;
    for (set, model) in ens.member_sets.iter().zip(&ens.models) {
        let candidate_set = member_set_with_candidate(set, z)?;
        let tau = member_matrix(&candidate_set, model, &ens.shadow_val, method)?;
        total += compensation_share(&tau, &z_ids, &cfg)?.share;
    }
    Ok(total / ens.len() as f64)
}

/// Per-member sums of validation-loss gradients, the constant factor in the
/// smooth proxy. Members whose sum vanishes contribute nothing.
fn val_gradient_sums(ens: &ShadowEnsemble) -> Vec<Vec<f64>> {
    ens.models
        .iter()
        .map(|model| {
            let mut acc = vec![0.0; model.arch.param_count()];
            for p in ens.shadow_val.points() {
                let g = model.grad_theta(p);
                for (a, b) in acc.iter_mut().zip(&g) {
                    *a += b;
                }
            }
            acc
        })
        .collect()
}

/// Smooth proxy for [`shadow_share`]: the sum over members, candidate
/// points, and stand-in validation points of the gradient-alignment score
/// `−⟨∇θℓ(z), ∇θℓ(v)⟩`, normalized by `m · k · |shadow_val|`. The `k`
/// normalization mirrors the share it stands in for; it scales but never
/// reorders candidates.
pub fn surrogate_objective(z: &Dataset, ens: &ShadowEnsemble, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(CoreError::Param("surrogate needs k ≥ 1".into()));
    }
    let sums = val_gradient_sums(ens);
    let norm = (ens.len() * k * ens.shadow_val.len()) as f64;
    let mut total = 0.0;
    for (model, g_sum) in ens.models.iter().zip(&sums) {
        for p in z.points() {
            let g = model.grad_theta(p);
            total -= crate::linalg::dot(&g, g_sum);
        }
    }
    Ok(total / norm)
}

/// Feature gradient of one candidate point's share of the proxy objective.
///
/// The required mixed derivative `∂/∂x ⟨∇θℓ(x), G⟩` equals the directional
/// derivative of `∇ₓℓ` along `G` in parameter space, taken here as a central
/// difference of `∇ₓℓ` at `θ ± h·G/‖G‖`.
fn surrogate_point_gradient(
    point: &crate::data::DataPoint,
    models: &[ModelParams],
    g_sums: &[Vec<f64>],
    norm: f64,
) -> Vec<f64> {
    const H: f64 = 1e-5;
    let dim = point.features.len();
    let mut out = vec![0.0; dim];
    for (model, g_sum) in models.iter().zip(g_sums) {
        let scale = crate::linalg::norm2(g_sum);
        if scale == 0.0 {
            continue;
        }
        let mut plus = model.clone();
        let mut minus = model.clone();
        for ((tp, tm), g) in plus
            .theta
            .iter_mut()
            .zip(minus.theta.iter_mut())
            .zip(g_sum)
        {
            let d = H * g / scale;
            *tp += d;
            *tm -= d;
        }
        let gp = plus.grad_x(point);
        let gm = minus.grad_x(point);
        for (o, (a, b)) in out.iter_mut().zip(gp.iter().zip(&gm)) {
            // d/dx of −⟨∇θℓ(x), G⟩, rescaled back by ‖G‖.
            *o -= (a - b) / (2.0 * H) * scale;
        }
    }
    for o in &mut out {
        *o /= norm;
    }
    out
}

/// Projected sign-gradient ascent on the proxy objective, one candidate
/// point at a time. Every iterate stays inside the `eps_inf` box around the
/// starting features and inside `[0,1]` per coordinate; labels, ids, and
/// provenance never change. The member models stay frozen throughout.
pub fn shadow_attack(z: &Dataset, ens: &ShadowEnsemble, budget: &AttackBudget) -> Result<Dataset> {
    budget.validate()?;
    for p in z.points() {
        if p.features.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
            return Err(CoreError::Param(format!(
                "candidate point {} has features outside [0,1]",
                p.id
            )));
        }
    }
    // The proxy objective is a sum of per-point terms, so each point ascends
    // independently; normalization only rescales the gradient and cannot
    // change any sign, hence k is irrelevant here (taken as 1).
    let g_sums = val_gradient_sums(ens);
    let norm = (ens.len() * ens.shadow_val.len()) as f64;
    let features: Vec<Vec<f64>> = z
        .points()
        .par_iter()
        .map(|p| {
            let mut moved = p.clone();
            for _ in 0..budget.iterations {
                let grad = surrogate_point_gradient(&moved, &ens.models, &g_sums, norm);
                for d in 0..moved.features.len() {
                    let stepped = moved.features[d] + budget.step_size * crate::linalg::sign0(grad[d]);
                    let lo = (p.features[d] - budget.eps_inf).max(0.0);
                    let hi = (p.features[d] + budget.eps_inf).min(1.0);
                    moved.features[d] = stepped.clamp(lo, hi);
                }
            }
            moved.features
        })
        .collect();
    z.with_features(features)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_blobs, DataPoint, Provenance};
    use crate::linalg::linf_dist;

    fn lr_arch(dim: usize) -> Architecture {
        Architecture::Lr {
            dim,
            classes: 2,
            l2_reg: 0.01,
        }
    }

    fn quick_tcfg() -> TrainConfig {
        TrainConfig {
            epochs: 15,
            learning_rate: 0.5,
            ..TrainConfig::default()
        }
    }

    fn small_ensemble(m: usize, seed: u64) -> (Dataset, ShadowEnsemble) {
        let pool = synth_blobs(60, 2, 4, 0.15, seed).unwrap();
        let z = relabeled(synth_blobs(6, 2, 4, 0.15, seed + 1).unwrap(), 1000);
        let ens = train_shadow_ensemble(
            &pool,
            &z,
            m,
            30,
            12,
            &lr_arch(4),
            &quick_tcfg(),
            seed + 2,
        )
        .unwrap();
        (z, ens)
    }

    /// Re-ids a dataset so it cannot collide with pool ids.
    fn relabeled(data: Dataset, base: u64) -> Dataset {
        let points = data
            .points()
            .iter()
            .enumerate()
            .map(|(i, p)| DataPoint {
                id: base + i as u64,
                label: p.label,
                provenance: Provenance::Adversary,
                features: p.features.clone(),
            })
            .collect();
        Dataset::new(data.dim(), data.classes(), points).unwrap()
    }

    #[test]
    fn members_contain_every_candidate_id() {
        let (z, ens) = small_ensemble(2, 10);
        assert_eq!(ens.len(), 2);
        for i in 0..ens.len() {
            let ids = ens.member_train_ids(i);
            for zid in z.ids() {
                assert!(ids.contains(&zid));
            }
            assert_eq!(ids.len(), 30 + z.len());
        }
        // Validation points never leak into member training sets.
        for vid in ens.shadow_val.ids() {
            for i in 0..ens.len() {
                assert!(!ens.member_train_ids(i).contains(&vid));
            }
        }
    }

    #[test]
    fn same_seed_gives_identical_ensembles() {
        let (_, a) = small_ensemble(3, 11);
        let (_, b) = small_ensemble(3, 11);
        for (ma, mb) in a.models.iter().zip(&b.models) {
            assert_eq!(ma.theta, mb.theta);
        }
        for i in 0..3 {
            assert_eq!(a.member_train_ids(i), b.member_train_ids(i));
        }
        assert_eq!(a.shadow_val.ids(), b.shadow_val.ids());
    }

    #[test]
    fn undersized_pool_is_rejected() {
        let pool = synth_blobs(20, 2, 4, 0.15, 1).unwrap();
        let z = relabeled(synth_blobs(3, 2, 4, 0.15, 2).unwrap(), 1000);
        let err = train_shadow_ensemble(
            &pool,
            &z,
            2,
            18,
            5,
            &lr_arch(4),
            &quick_tcfg(),
            3,
        );
        assert!(matches!(err, Err(CoreError::Param(_))));
    }

    #[test]
    fn shadow_accuracy_tracks_directly_trained_model() {
        // All slices come from one draw so they share the same class
        // geometry; separate draws would be separate distributions.
        let big = synth_blobs(540, 2, 4, 0.15, 20).unwrap();
        let idx: Vec<usize> = (0..big.len()).collect();
        let pool = big.subset_by_indices(&idx[..300]).unwrap();
        let z = big.subset_by_indices(&idx[300..310]).unwrap();
        let target_train = big.subset_by_indices(&idx[310..460]).unwrap();
        let probe = big.subset_by_indices(&idx[460..540]).unwrap();
        let arch = lr_arch(4);
        let tcfg = quick_tcfg();
        let target = train(&arch, &target_train, &tcfg).unwrap();
        let ens = train_shadow_ensemble(&pool, &z, 10, 100, 40, &arch, &tcfg, 24).unwrap();
        let mean_acc: f64 = ens
            .models
            .iter()
            .map(|m| m.accuracy(&probe))
            .sum::<f64>()
            / ens.len() as f64;
        let target_acc = target.accuracy(&probe);
        assert!(
            (mean_acc - target_acc).abs() <= 0.05,
            "shadow {mean_acc} target {target_acc}"
        );
    }

    #[test]
    fn single_member_share_reduces_to_compensation_share() {
        let (z, ens) = small_ensemble(1, 30);
        let share = shadow_share(&z, &ens, 5, AttributionMethod::GradDot).unwrap();
        let tau = grad_dot(&ens.member_sets[0], &ens.models[0], &ens.shadow_val).unwrap();
        let cfg = TopKConfig {
            k: 5,
            ..TopKConfig::default()
        };
        let direct = compensation_share(&tau, &z.ids(), &cfg).unwrap().share;
        assert_eq!(share, direct);
    }

    #[test]
    fn ensemble_share_is_mean_of_member_shares() {
        let (z, ens) = small_ensemble(3, 31);
        let share = shadow_share(&z, &ens, 4, AttributionMethod::GradDot).unwrap();
        let cfg = TopKConfig {
            k: 4,
            ..TopKConfig::default()
        };
        let mut acc = 0.0;
        for i in 0..3 {
            let tau = grad_dot(&ens.member_sets[i], &ens.models[i], &ens.shadow_val).unwrap();
            acc += compensation_share(&tau, &z.ids(), &cfg).unwrap().share;
        }
        assert!((share - acc / 3.0).abs() < 1e-15);
    }

    #[test]
    fn candidates_mirroring_validation_capture_nothing() {
        // Candidates that exactly copy a validation point have gradients
        // aligned with it, which scores most *negative* under the alignment
        // convention; opposite-class pool points fill the positive top slots.
        let pool = synth_blobs(80, 2, 4, 0.1, 32).unwrap();
        let val_feats = vec![0.9, 0.1, 0.8, 0.2];
        let mirrored = Dataset::new(
            4,
            2,
            (0..4)
                .map(|i| DataPoint {
                    id: 2000 + i,
                    label: 0,
                    provenance: Provenance::Adversary,
                    features: val_feats.clone(),
                })
                .collect(),
        )
        .unwrap();
        let mut ens = train_shadow_ensemble(
            &pool,
            &mirrored,
            2,
            40,
            15,
            &lr_arch(4),
            &quick_tcfg(),
            34,
        )
        .unwrap();
        // The stand-in validation set is independent of member training;
        // pin it to near-copies of the candidate features with the same
        // label so every column's gradient agrees with the candidates'.
        ens.shadow_val = Dataset::new(
            4,
            2,
            (0..6)
                .map(|i| DataPoint {
                    id: 9000 + i,
                    label: 0,
                    provenance: Provenance::Validation,
                    features: val_feats
                        .iter()
                        .map(|&x| x + 0.001 * i as f64)
                        .collect(),
                })
                .collect(),
        )
        .unwrap();
        let share = shadow_share(&mirrored, &ens, 3, AttributionMethod::GradDot).unwrap();
        assert_eq!(share, 0.0);
    }

    #[test]
    fn retraining_based_scoring_is_rejected() {
        let (z, ens) = small_ensemble(1, 35);
        assert!(matches!(
            shadow_share(&z, &ens, 3, AttributionMethod::DataShapley),
            Err(CoreError::Param(_))
        ));
    }

    #[test]
    fn saturated_models_give_exactly_zero_objective() {
        let (z, mut ens) = small_ensemble(1, 36);
        // A hugely confident correct model has exactly zero loss gradients on
        // its validation points (the off-class softmax mass underflows), and
        // the zero vector is orthogonal to every candidate gradient.
        ens.models[0].theta = vec![400.0, 0.0, 0.0, 0.0, -400.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        ens.shadow_val = Dataset::new(
            4,
            2,
            (0..3)
                .map(|i| DataPoint {
                    id: 9000 + i,
                    label: 0,
                    provenance: Provenance::Validation,
                    features: vec![1.0, 0.0, 0.0, 0.0],
                })
                .collect(),
        )
        .unwrap();
        // Drop the ridge so the parameter gradient is the pure loss gradient.
        if let Architecture::Lr { l2_reg, .. } = &mut ens.models[0].arch {
            *l2_reg = 0.0;
        }
        let obj = surrogate_objective(&z, &ens, 5).unwrap();
        assert_eq!(obj, 0.0);
    }

    #[test]
    fn duplicated_validation_set_leaves_objective_unchanged() {
        let (z, ens) = small_ensemble(2, 37);
        let mut doubled = ens.clone();
        let copies: Vec<DataPoint> = ens
            .shadow_val
            .points()
            .iter()
            .enumerate()
            .map(|(i, p)| DataPoint {
                id: 7000 + i as u64,
                label: p.label,
                provenance: p.provenance,
                features: p.features.clone(),
            })
            .collect();
        doubled.shadow_val = ens
            .shadow_val
            .union(&Dataset::new(4, 2, copies).unwrap())
            .unwrap();
        let a = surrogate_objective(&z, &ens, 5).unwrap();
        let b = surrogate_objective(&z, &doubled, 5).unwrap();
        assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "{a} vs {b}");
    }

    #[test]
    fn feature_gradient_matches_finite_differences_of_objective() {
        let (z, ens) = small_ensemble(2, 38);
        let k = 3;
        let g_sums = val_gradient_sums(&ens);
        let norm = (ens.len() * k * ens.shadow_val.len()) as f64;
        let p = z.point(0).clone();
        let grad = surrogate_point_gradient(&p, &ens.models, &g_sums, norm);
        let h = 1e-5;
        for d in 0..4 {
            let mut feats_p: Vec<Vec<f64>> =
                z.points().iter().map(|q| q.features.clone()).collect();
            let mut feats_m = feats_p.clone();
            feats_p[0][d] += h;
            feats_m[0][d] -= h;
            let zp = z.with_features(feats_p).unwrap();
            let zm = z.with_features(feats_m).unwrap();
            let op = surrogate_objective(&zp, &ens, k).unwrap();
            let om = surrogate_objective(&zm, &ens, k).unwrap();
            let fd = (op - om) / (2.0 * h);
            let denom = fd.abs().max(grad[d].abs()).max(1e-12);
            assert!(
                ((grad[d] - fd) / denom).abs() <= 1e-4,
                "coord {d}: analytic {} vs fd {fd}",
                grad[d]
            );
        }
    }

    #[test]
    fn zero_step_size_returns_input_unchanged() {
        let (z, ens) = small_ensemble(2, 39);
        let budget = AttackBudget {
            step_size: 0.0,
            ..AttackBudget::default()
        };
        let out = shadow_attack(&z, &ens, &budget).unwrap();
        for (a, b) in z.points().iter().zip(out.points()) {
            assert_eq!(a.features, b.features);
            assert_eq!(a.id, b.id);
            assert_eq!(a.label, b.label);
        }
    }

    #[test]
    fn perturbations_respect_budget_and_box() {
        let (z, ens) = small_ensemble(3, 40);
        let budget = AttackBudget {
            eps_inf: 0.05,
            step_size: 0.01,
            iterations: 10,
        };
        let out = shadow_attack(&z, &ens, &budget).unwrap();
        for (a, b) in z.points().iter().zip(out.points()) {
            assert!(linf_dist(&a.features, &b.features) <= budget.eps_inf + 1e-12);
            assert!(b.features.iter().all(|&x| (0.0..=1.0).contains(&x)));
            assert_eq!(a.id, b.id);
            assert_eq!(a.label, b.label);
            assert_eq!(a.provenance, b.provenance);
        }
    }

    #[test]
    fn attack_is_deterministic() {
        let (z, ens) = small_ensemble(2, 41);
        let out1 = shadow_attack(&z, &ens, &AttackBudget::default()).unwrap();
        let out2 = shadow_attack(&z, &ens, &AttackBudget::default()).unwrap();
        for (a, b) in out1.points().iter().zip(out2.points()) {
            assert_eq!(a.features, b.features);
        }
    }

    #[test]
    fn attack_raises_captured_share_on_small_pipeline() {
        let big = synth_blobs(315, 2, 5, 0.15, 50).unwrap();
        let idx: Vec<usize> = (0..big.len()).collect();
        let pool = big.subset_by_indices(&idx[..300]).unwrap();
        let z = big.subset_by_indices(&idx[300..315]).unwrap();
        let arch = lr_arch(5);
        let ens =
            train_shadow_ensemble(&pool, &z, 5, 120, 40, &arch, &quick_tcfg(), 52).unwrap();
        let before = shadow_share(&z, &ens, 10, AttributionMethod::GradDot).unwrap();
        let attacked = shadow_attack(&z, &ens, &AttackBudget::default()).unwrap();
        let after = shadow_share(&attacked, &ens, 10, AttributionMethod::GradDot).unwrap();
        assert!(
            after >= 1.5 * before.max(1e-9),
            "before {before} after {after}"
        );
    }

    #[test]
    fn invalid_budgets_are_rejected() {
        let good = AttackBudget::default();
        assert!(good.validate().is_ok());
        for bad in [
            AttackBudget {
                eps_inf: 0.0,
                ..good
            },
            AttackBudget {
                eps_inf: f64::NAN,
                ..good
            },
            AttackBudget {
                step_size: -0.1,
                ..good
            },
            AttackBudget {
                iterations: 0,
                ..good
            },
        ] {
            assert!(bad.validate().is_err());
        }
    }
}
