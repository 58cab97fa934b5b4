//! Retraining-based marginal value: permutation-sampled Shapley scores.
//!
//! A training point's score on a validation point is the average, over
//! sampled orderings, of how much adding it to the preceding coalition
//! reduces the validation loss: `ϕ(S) − ϕ(S ∪ {j})`, with `ϕ` the loss of a
//! model retrained from scratch on the coalition and the empty coalition
//! evaluated at the seeded initialization. Coalitions are sets: prefix
//! indices are sorted before retraining so a coalition always maps to one
//! model regardless of arrival order.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{AttributionMethod, ContributionMatrix};
use crate::data::Dataset;
use crate::error::{CoreError, Result};
use crate::model::{self, Architecture, ModelParams, TrainConfig};

/// Retraining cost grows as permutations × points; beyond this the method
/// stops being desk-scale.
pub const MAX_SHAPLEY_POINTS: usize = 300;

/// Exact enumeration is n! — keep it tiny.
pub const MAX_EXACT_POINTS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShapleyConfig {
    pub permutations: usize,
    /// A permutation walk stops early once the largest marginal change over
    /// the validation set stays below this for 5 consecutive points; the
    /// remaining points contribute 0 for that permutation. 0 disables
    /// truncation.
    pub truncation_tol: f64,
    /// Epochs for each coalition retraining (full training budgets make the
    /// method unusable; the scores target ranking, not converged losses).
    pub retrain_epochs: usize,
    pub seed: u64,
}

impl Default for ShapleyConfig {
    fn default() -> Self {
        ShapleyConfig {
            permutations: 200,
            truncation_tol: 0.0,
            retrain_epochs: 5,
            seed: 0,
        }
    }
}

impl ShapleyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.permutations == 0 {
            return Err(CoreError::Param(
                "at least one permutation is required".into(),
            ));
        }
        if !self.truncation_tol.is_finite() || self.truncation_tol < 0.0 {
            return Err(CoreError::Param(format!(
                "truncation tolerance must be finite and non-negative, got {}",
                self.truncation_tol
            )));
        }
        if self.retrain_epochs == 0 {
            return Err(CoreError::Param("retrain_epochs must be positive".into()));
        }
        Ok(())
    }
}

const TRUNCATION_PATIENCE: usize = 5;

pub fn data_shapley(
    train: &Dataset,
    arch: &Architecture,
    tcfg: &TrainConfig,
    val: &Dataset,
    cfg: &ShapleyConfig,
) -> Result<ContributionMatrix> {
    cfg.validate()?;
    let walker = Walker::new(train, arch, tcfg, val, cfg.retrain_epochs)?;
    if train.len() > MAX_SHAPLEY_POINTS {
        return Err(CoreError::Param(format!(
            "shapley retraining caps at {MAX_SHAPLEY_POINTS} training points, got {}",
            train.len()
        )));
    }

    let n = train.len();
    let per_perm: Vec<Result<Vec<f64>>> = (0..cfg.permutations as u64)
        .into_par_iter()
        .map(|p| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(p);
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            walker.walk(&order, cfg.truncation_tol)
        })
        .collect();

    let mut totals = vec![0.0; n * val.len()];
    for res in per_perm {
        for (t, x) in totals.iter_mut().zip(res?) {
            *t += x;
        }
    }
    let scale = 1.0 / cfg.permutations as f64;
    for t in &mut totals {
        *t *= scale;
    }
    ContributionMatrix::new(
        AttributionMethod::DataShapley,
        train.ids(),
        val.ids(),
        totals,
    )
}

/// Average over all n! orderings — the oracle the sampled estimator is
/// checked against.
pub fn data_shapley_exact(
    train: &Dataset,
    arch: &Architecture,
    tcfg: &TrainConfig,
    val: &Dataset,
    retrain_epochs: usize,
) -> Result<ContributionMatrix> {
    let walker = Walker::new(train, arch, tcfg, val, retrain_epochs)?;
    let n = train.len();
    if n > MAX_EXACT_POINTS {
        return Err(CoreError::Param(format!(
            "exact enumeration caps at {MAX_EXACT_POINTS} training points, got {n}"
        )));
    }

    let mut totals = vec![0.0; n * val.len()];
    let mut count = 0u64;
    let mut order: Vec<usize> = (0..n).collect();
    // Heap's algorithm over index permutations, accumulated sequentially so
    // the result is bitwise deterministic.
    permute(&mut order, &mut |perm| {
        count += 1;
        let contrib = walker.walk(perm, 0.0)?;
        for (t, x) in totals.iter_mut().zip(contrib) {
            *t += x;
        }
        Ok(())
    })?;
    let scale = 1.0 / count as f64;
    for t in &mut totals {
        *t *= scale;
    }
    ContributionMatrix::new(
        AttributionMethod::DataShapley,
        train.ids(),
        val.ids(),
        totals,
    )
}

fn permute(
    items: &mut Vec<usize>,
    visit: &mut impl FnMut(&[usize]) -> Result<()>,
) -> Result<()> {
    fn heap(k: usize, items: &mut Vec<usize>, visit: &mut impl FnMut(&[usize]) -> Result<()>) -> Result<()> {
        if k <= 1 {
            return visit(items);
        }
        for i in 0..k {
            heap(k - 1, items, visit)?;
            if k % 2 == 0 {
                items.swap(i, k - 1);
            } else {
                items.swap(0, k - 1);
            }
        }
        Ok(())
    }
    let k = items.len();
    heap(k, items, visit)
}

struct Walker<'a> {
    train: &'a Dataset,
    arch: &'a Architecture,
    tcfg: TrainConfig,
    val: &'a Dataset,
    init_losses: Vec<f64>,
}

impl<'a> Walker<'a> {
    fn new(
        train: &'a Dataset,
        arch: &'a Architecture,
        tcfg: &TrainConfig,
        val: &'a Dataset,
        retrain_epochs: usize,
    ) -> Result<Self> {
        arch.validate()?;
        tcfg.validate()?;
        if retrain_epochs == 0 {
            return Err(CoreError::Param("retrain_epochs must be positive".into()));
        }
        if train.is_empty() || val.is_empty() {
            return Err(CoreError::Param(
                "shapley scores need non-empty training and validation sets".into(),
            ));
        }
        if train.dim() != arch.dim() || val.dim() != arch.dim() {
            return Err(CoreError::DimMismatch(format!(
                "dataset dims {}/{} vs architecture dim {}",
                train.dim(),
                val.dim(),
                arch.dim()
            )));
        }
        let tcfg = TrainConfig {
            epochs: retrain_epochs,
            ..tcfg.clone()
        };
        let init = ModelParams {
            arch: arch.clone(),
            theta: model::init_theta(arch, tcfg.seed)?,
            train_seed: tcfg.seed,
        };
        let init_losses = val.points().iter().map(|v| init.loss(v)).collect();
        Ok(Walker {
            train,
            arch,
            tcfg,
            val,
            init_losses,
        })
    }

    /// Marginal contributions of one ordering, flattened row-major over
    /// (training index, validation index).
    fn walk(&self, order: &[usize], truncation_tol: f64) -> Result<Vec<f64>> {
        let n = self.train.len();
        let n_val = self.val.len();
        let mut out = vec![0.0; n * n_val];
        let mut prev = self.init_losses.clone();
        let mut prefix: Vec<usize> = Vec::with_capacity(n);
        let mut quiet_streak = 0usize;
        for &j in order {
            prefix.push(j);
            let mut coalition = prefix.clone();
            coalition.sort_unstable();
            let subset = self.train.subset_by_indices(&coalition)?;
            let m = model::train(self.arch, &subset, &self.tcfg)?;
            let mut max_delta = 0.0f64;
            for (v_idx, v) in self.val.points().iter().enumerate() {
                let loss = m.loss(v);
                let delta = prev[v_idx] - loss;
                out[j * n_val + v_idx] = delta;
                prev[v_idx] = loss;
                max_delta = max_delta.max(delta.abs());
            }
            if truncation_tol > 0.0 {
                if max_delta < truncation_tol {
                    quiet_streak += 1;
                    if quiet_streak >= TRUNCATION_PATIENCE {
                        break;
                    }
                } else {
                    quiet_streak = 0;
                }
            }
        }
        Ok(out)
    }
}
