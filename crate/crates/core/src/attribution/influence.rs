//! Curvature-aware contribution scores.
//!
//! For each validation point `v`, solve `(H + damping·I)s = ∇ℓ(v)` against
//! the training-loss curvature `H`, then score every training point as
//! `−∇ℓ(z_j)ᵀ s`. Columns are independent and solved in parallel; assembly
//! order is fixed by the validation index, so results are deterministic.

use rayon::prelude::*;

use super::cg::{self, CgConfig};
use super::{AttributionMethod, ContributionMatrix};
use crate::data::Dataset;
use crate::error::{CoreError, Result};
use crate::linalg::dot;
use crate::model::{CurvatureOp, ModelParams};

pub fn influence_function(
    train: &Dataset,
    model: &ModelParams,
    val: &Dataset,
    cfg: &CgConfig,
) -> Result<ContributionMatrix> {
    cfg.validate()?;
    check_dims(train, model)?;
    check_dims(val, model)?;
    if train.is_empty() || val.is_empty() {
        return Err(CoreError::Param(
            "influence scores need non-empty training and validation sets".into(),
        ));
    }

    let op = CurvatureOp::new(model, train)?;
    let train_grads: Vec<Vec<f64>> = train
        .points()
        .iter()
        .map(|p| model.grad_theta(p))
        .collect();

    let columns: Vec<Result<(Vec<f64>, bool)>> = val
        .points()
        .par_iter()
        .map(|v| {
            let gv = model.grad_theta(v);
            let sol = cg::solve(|x| op.hvp(x), &gv, cfg)
                .map_err(|()| CoreError::CgBreakdown { val_id: v.id })?;
            let col: Vec<f64> = train_grads.iter().map(|g| -dot(g, &sol.x)).collect();
            if col.iter().any(|t| !t.is_finite()) {
                return Err(CoreError::CgBreakdown { val_id: v.id });
            }
            Ok((col, sol.converged))
        })
        .collect();

    let mut cols = Vec::with_capacity(columns.len());
    let mut unconverged = Vec::new();
    for (v, res) in val.points().iter().zip(columns) {
        let (col, converged) = res?;
        if !converged {
            unconverged.push(v.id);
        }
        cols.push(col);
    }
    ContributionMatrix::from_columns(
        AttributionMethod::InfluenceFunction,
        train.ids(),
        val.ids(),
        cols,
        unconverged,
    )
}

pub(super) fn check_dims(data: &Dataset, model: &ModelParams) -> Result<()> {
    if data.dim() != model.arch.dim() {
        return Err(CoreError::DimMismatch(format!(
            "dataset dim {} vs model dim {}",
            data.dim(),
            model.arch.dim()
        )));
    }
    if data.classes() > model.arch.classes() {
        return Err(CoreError::Param(format!(
            "dataset has {} classes but the model outputs {}",
            data.classes(),
            model.arch.classes()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_blobs, DataPoint, Provenance};
    use crate::model::{train, Architecture, TrainConfig};

    fn tiny_lr() -> (Dataset, ModelParams, Dataset) {
        let data = synth_blobs(40, 2, 4, 0.1, 3).unwrap();
        let arch = Architecture::Lr {
            dim: 4,
            classes: 2,
            l2_reg: 0.05,
        };
        let cfg = TrainConfig {
            epochs: 60,
            ..TrainConfig::default()
        };
        let model = train(&arch, &data, &cfg).unwrap();
        let val = synth_blobs(8, 2, 4, 0.1, 4).unwrap();
        (data, model, val)
    }

    #[test]
    fn matrix_shape_and_determinism() {
        let (train_set, model, val) = tiny_lr();
        let cfg = CgConfig::default_for(&model.arch);
        let a = influence_function(&train_set, &model, &val, &cfg).unwrap();
        let b = influence_function(&train_set, &model, &val, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.n_train(), 40);
        assert_eq!(a.n_val(), 8);
        assert!(a.unconverged_val_ids().is_empty());
    }

    #[test]
    fn zero_validation_gradient_gives_zero_column() {
        // Saturated point: with no regularization the loss gradient vanishes
        // once the softmax rounds to exactly 1.
        let arch = Architecture::Lr {
            dim: 2,
            classes: 2,
            l2_reg: 0.0,
        };
        let theta = vec![400.0, 0.0, -400.0, 0.0, 0.0, 0.0];
        let model = ModelParams {
            arch,
            theta,
            train_seed: 0,
        };
        let train_set = synth_blobs(10, 2, 2, 0.1, 1).unwrap();
        let sat = DataPoint {
            id: 1000,
            label: 0,
            provenance: Provenance::Validation,
            features: vec![1.0, 0.0],
        };
        assert_eq!(crate::linalg::norm2(&model.grad_theta(&sat)), 0.0);
        let val = Dataset::new(2, 2, vec![sat]).unwrap();
        let cfg = CgConfig {
            damping: 0.01,
            ..CgConfig::default()
        };
        let m = influence_function(&train_set, &model, &val, &cfg).unwrap();
        assert!(m.column(0).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn iteration_cap_is_flagged_not_fatal() {
        let (train_set, model, val) = tiny_lr();
        let cfg = CgConfig {
            damping: 0.0,
            max_iters: 1,
            tolerance: 1e-14,
        };
        let m = influence_function(&train_set, &model, &val, &cfg).unwrap();
        assert_eq!(m.unconverged_val_ids().len(), val.len());
    }

    #[test]
    fn huge_damping_recovers_scaled_gradient_dots() {
        // (H + λI)⁻¹ → λ⁻¹·I as λ grows, so λ·influence ≈ grad-dot.
        let (train_set, model, val) = tiny_lr();
        let lambda = 1e8;
        let cfg = CgConfig {
            damping: lambda,
            max_iters: 500,
            tolerance: 1e-12,
        };
        let inf = influence_function(&train_set, &model, &val, &cfg).unwrap();
        let gd = super::super::grad_dot(&train_set, &model, &val).unwrap();
        for i in 0..inf.n_train() {
            for j in 0..inf.n_val() {
                let scaled = inf.value(i, j) * lambda;
                let want = gd.value(i, j);
                let denom = want.abs().max(1e-12);
                assert!(
                    ((scaled - want) / denom).abs() < 1e-6,
                    "entry ({i},{j}): {scaled} vs {want}"
                );
            }
        }
    }
}
