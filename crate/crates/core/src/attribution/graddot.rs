//! First-order contribution scores: `−⟨∇ℓ(z_j), ∇ℓ(v)⟩`.
//!
//! The identity-curvature special case of the influence scorer, and the
//! fastest of the four methods — this is what the shadow-attack surrogate
//! differentiates through.

use rayon::prelude::*;

use super::influence::check_dims;
use super::{AttributionMethod, ContributionMatrix};
use crate::data::Dataset;
use crate::error::{CoreError, Result};
use crate::linalg::dot;
use crate::model::ModelParams;

pub fn grad_dot(
    train: &Dataset,
    model: &ModelParams,
    val: &Dataset,
) -> Result<ContributionMatrix> {
    check_dims(train, model)?;
    check_dims(val, model)?;
    if train.is_empty() || val.is_empty() {
        return Err(CoreError::Param(
            "gradient-dot scores need non-empty training and validation sets".into(),
        ));
    }
    let train_grads: Vec<Vec<f64>> = train
        .points()
        .iter()
        .map(|p| model.grad_theta(p))
        .collect();
    let columns: Vec<Vec<f64>> = val
        .points()
        .par_iter()
        .map(|v| {
            let gv = model.grad_theta(v);
            train_grads.iter().map(|g| -dot(g, &gv)).collect()
        })
        .collect();
    ContributionMatrix::from_columns(
        AttributionMethod::GradDot,
        train.ids(),
        val.ids(),
        columns,
        Vec::new(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_blobs;
    use crate::model::{init_theta, Architecture};

    fn make_model(dim: usize) -> ModelParams {
        let arch = Architecture::Lr {
            dim,
            classes: 2,
            l2_reg: 0.0,
        };
        ModelParams {
            theta: init_theta(&arch, 11).unwrap(),
            arch,
            train_seed: 11,
        }
    }

    #[test]
    fn entries_are_negated_gradient_dots() {
        let model = make_model(3);
        let train_set = synth_blobs(6, 2, 3, 0.1, 0).unwrap();
        let val = synth_blobs(4, 2, 3, 0.1, 1).unwrap();
        let m = grad_dot(&train_set, &model, &val).unwrap();
        for (i, z) in train_set.points().iter().enumerate() {
            for (j, v) in val.points().iter().enumerate() {
                let want = -dot(&model.grad_theta(z), &model.grad_theta(v));
                assert!((m.value(i, j) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn self_score_is_non_positive() {
        let model = make_model(4);
        let data = synth_blobs(10, 2, 4, 0.1, 7).unwrap();
        let m = grad_dot(&data, &model, &data).unwrap();
        for i in 0..data.len() {
            assert!(m.value(i, i) <= 0.0, "self score {}", m.value(i, i));
        }
    }

    #[test]
    fn scaling_a_validation_gradient_scales_its_column() {
        // Bilinearity, exercised directly on the gradient kernel: the column
        // for a validation point whose gradient is c·g is c times the column
        // for gradient g. Checked by comparing against hand-computed dots.
        let model = make_model(3);
        let train_set = synth_blobs(5, 2, 3, 0.1, 2).unwrap();
        let val = synth_blobs(2, 2, 3, 0.1, 3).unwrap();
        let m = grad_dot(&train_set, &model, &val).unwrap();
        let c = 3.5;
        for (j, v) in val.points().iter().enumerate() {
            let scaled: Vec<f64> = model.grad_theta(v).iter().map(|g| c * g).collect();
            for (i, z) in train_set.points().iter().enumerate() {
                let want = -dot(&model.grad_theta(z), &scaled);
                assert!((c * m.value(i, j) - want).abs() < 1e-12);
            }
        }
    }
}
