//! Projected margin-gradient kernel scores.
//!
//! Each point is featurized as `φ(z) = Pᵀ∇_θ f(z; θ̂)` where `f` is the
//! correct-class logit margin and `P` is a random Gaussian projection.
//! Scores are `−(1 − p*_j)·φ(z_j)ᵀ(ΦᵀΦ + λI)⁻¹φ(v)` with `Φ` the stacked
//! training features and `p*_j` the model's confidence on the training
//! point's own label. With several independently trained models the
//! per-model scores are averaged, each model using its own projection draw.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::influence::check_dims;
use super::{AttributionMethod, ContributionMatrix};
use crate::data::Dataset;
use crate::error::{CoreError, Result};
use crate::model::{self, ModelParams, TrainConfig};

/// Upper bound on the projection dimension; beyond this the dense k×k solve
/// stops being desk-scale.
pub const MAX_PROJECTION_DIM: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectionKind {
    /// Entries i.i.d. standard normal, drawn from the config seed.
    #[default]
    Gaussian,
    /// No projection: features are the raw margin gradients. Requires the
    /// projection dimension to equal the parameter count.
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrakConfig {
    pub k_proj: usize,
    /// Seed for the projection draw; model `r` of an ensemble uses `seed + r`.
    pub seed: u64,
    /// `None` picks `1e-6·trace(ΦᵀΦ)/k_proj`, scaling with the feature
    /// magnitude.
    pub ridge: Option<f64>,
    /// Number of independently trained models to average over.
    pub ensemble: usize,
    /// Fraction of the training set each extra ensemble member sees.
    pub subset_fraction: f64,
    pub projection: ProjectionKind,
}

impl Default for TrakConfig {
    fn default() -> Self {
        TrakConfig {
            k_proj: 512,
            seed: 0,
            ridge: None,
            ensemble: 1,
            subset_fraction: 0.5,
            projection: ProjectionKind::Gaussian,
        }
    }
}

impl TrakConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_proj == 0 || self.k_proj > MAX_PROJECTION_DIM {
            return Err(CoreError::Param(format!(
                "projection dimension must be in 1..={MAX_PROJECTION_DIM}, got {}",
                self.k_proj
            )));
        }
        if let Some(r) = self.ridge {
            if !r.is_finite() || r < 0.0 {
                return Err(CoreError::Param(format!(
                    "ridge must be finite and non-negative, got {r}"
                )));
            }
        }
        if self.ensemble == 0 {
            return Err(CoreError::Param("ensemble count must be positive".into()));
        }
        if !(self.subset_fraction > 0.0 && self.subset_fraction <= 1.0) {
            return Err(CoreError::Param(format!(
                "subset_fraction must be in (0, 1], got {}",
                self.subset_fraction
            )));
        }
        Ok(())
    }
}

/// Train `count − 1` extra models on random subsets (the first member is
/// always the provided fully trained model, mirroring the naive variant).
pub fn train_trak_ensemble(
    train: &Dataset,
    base: &ModelParams,
    tcfg: &TrainConfig,
    cfg: &TrakConfig,
) -> Result<Vec<ModelParams>> {
    cfg.validate()?;
    let mut models = vec![base.clone()];
    if cfg.ensemble == 1 {
        return Ok(models);
    }
    let subset_len = ((train.len() as f64 * cfg.subset_fraction).floor() as usize).max(1);
    let extras: Vec<Result<ModelParams>> = (1..cfg.ensemble as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(r));
            let idx = rand::seq::index::sample(&mut rng, train.len(), subset_len);
            let mut idx: Vec<usize> = idx.into_vec();
            idx.sort_unstable();
            let subset = train.subset_by_indices(&idx)?;
            let member_cfg = TrainConfig {
                seed: tcfg.seed.wrapping_add(r),
                ..tcfg.clone()
            };
            model::train(&base.arch, &subset, &member_cfg)
        })
        .collect();
    for m in extras {
        models.push(m?);
    }
    Ok(models)
}

struct Featurizer {
    /// Row-major `p × k` projection, or `None` for the identity.
    projection: Option<Vec<f64>>,
    k: usize,
}

impl Featurizer {
    fn new(kind: ProjectionKind, p: usize, k: usize, seed: u64) -> Result<Self> {
        match kind {
            ProjectionKind::Identity => {
                if k != p {
                    return Err(CoreError::Param(format!(
                        "identity projection needs k_proj = parameter count ({p}), got {k}"
                    )));
                }
                Ok(Featurizer {
                    projection: None,
                    k,
                })
            }
            ProjectionKind::Gaussian => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let normal = StandardNormal;
                let projection = (0..p * k)
                    .map(|_| normal.sample(&mut rng))
                    .collect::<Vec<f64>>();
                Ok(Featurizer {
                    projection: Some(projection),
                    k,
                })
            }
        }
    }

    fn features(&self, grad: &[f64]) -> Vec<f64> {
        match &self.projection {
            None => grad.to_vec(),
            Some(p) => {
                let mut out = vec![0.0; self.k];
                for (gi, row) in grad.iter().zip(p.chunks_exact(self.k)) {
                    if *gi == 0.0 {
                        continue;
                    }
                    for (o, w) in out.iter_mut().zip(row) {
                        *o += gi * w;
                    }
                }
                out
            }
        }
    }
}

pub fn trak(
    train: &Dataset,
    models: &[ModelParams],
    val: &Dataset,
    cfg: &TrakConfig,
) -> Result<ContributionMatrix> {
    cfg.validate()?;
    if models.is_empty() {
        return Err(CoreError::Param("trak needs at least one model".into()));
    }
    for m in models {
        check_dims(train, m)?;
        check_dims(val, m)?;
    }
    if train.is_empty() || val.is_empty() {
        return Err(CoreError::Param(
            "trak needs non-empty training and validation sets".into(),
        ));
    }

    let mut sums = vec![vec![0.0; train.len()]; val.len()];
    for (r, m) in models.iter().enumerate() {
        let cols = single_model_columns(train, m, val, cfg, cfg.seed.wrapping_add(r as u64))?;
        for (acc, col) in sums.iter_mut().zip(cols) {
            for (a, c) in acc.iter_mut().zip(col) {
                *a += c;
            }
        }
    }
    let inv_m = 1.0 / models.len() as f64;
    for col in &mut sums {
        for v in col.iter_mut() {
            *v *= inv_m;
        }
    }
    ContributionMatrix::from_columns(
        AttributionMethod::Trak,
        train.ids(),
        val.ids(),
        sums,
        Vec::new(),
    )
}

fn single_model_columns(
    train: &Dataset,
    m: &ModelParams,
    val: &Dataset,
    cfg: &TrakConfig,
    proj_seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let p = m.arch.param_count();
    let featurizer = Featurizer::new(cfg.projection, p, cfg.k_proj, proj_seed)?;
    let k = cfg.k_proj;

    struct TrainFeat {
        phi: Vec<f64>,
        weight: f64, // 1 − p*_j
    }
    let feats: Vec<TrainFeat> = train
        .points()
        .par_iter()
        .map(|z| {
            let phi = featurizer.features(&m.margin_grad_theta(z));
            let weight = 1.0 - m.predict_proba(&z.features)[z.label];
            TrainFeat { phi, weight }
        })
        .collect();

    // Gram matrix ΦᵀΦ (upper triangle, mirrored).
    let mut gram = DMatrix::<f64>::zeros(k, k);
    for f in &feats {
        for a in 0..k {
            let fa = f.phi[a];
            if fa == 0.0 {
                continue;
            }
            for b in a..k {
                gram[(a, b)] += fa * f.phi[b];
            }
        }
    }
    for a in 0..k {
        for b in a + 1..k {
            gram[(b, a)] = gram[(a, b)];
        }
    }
    let ridge = cfg.ridge.unwrap_or_else(|| 1e-6 * gram.trace() / k as f64);
    for a in 0..k {
        gram[(a, a)] += ridge;
    }
    let chol: Cholesky<f64, nalgebra::Dyn> = gram.cholesky().ok_or_else(|| {
        CoreError::Singular(
            "projected feature Gram matrix is not positive definite; set a positive ridge"
                .into(),
        )
    })?;

    let columns: Vec<Vec<f64>> = val
        .points()
        .par_iter()
        .map(|v| {
            let phi_v = featurizer.features(&m.margin_grad_theta(v));
            let y = chol.solve(&DVector::from_vec(phi_v));
            feats
                .iter()
                .map(|f| {
                    let dot: f64 = f.phi.iter().zip(y.iter()).map(|(a, b)| a * b).sum();
                    -f.weight * dot
                })
                .collect()
        })
        .collect();
    Ok(columns)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_blobs, DataPoint, Provenance};
    use crate::model::Architecture;
    use crate::linalg::spearman;
    use crate::model::{init_theta, train};

    fn lr_setup(dim: usize, n: usize, seed: u64) -> (Dataset, ModelParams, Dataset) {
        let data = synth_blobs(n, 2, dim, 0.1, seed).unwrap();
        let arch = Architecture::Lr {
            dim,
            classes: 2,
            l2_reg: 0.05,
        };
        let tcfg = TrainConfig {
            epochs: 40,
            ..TrainConfig::default()
        };
        let model = train(&arch, &data, &tcfg).unwrap();
        let val = synth_blobs(6, 2, dim, 0.1, seed + 1).unwrap();
        (data, model, val)
    }

    #[test]
    fn identity_projection_matches_unprojected_formula() {
        let (data, model, val) = lr_setup(2, 8, 5);
        let p = model.arch.param_count();
        let cfg = TrakConfig {
            k_proj: p,
            projection: ProjectionKind::Identity,
            ridge: Some(1e-3),
            ..TrakConfig::default()
        };
        let m = trak(&data, std::slice::from_ref(&model), &val, &cfg).unwrap();

        // Direct dense computation of −(1−p*)gᵀ(GᵀG+λI)⁻¹g_v.
        let grads: Vec<Vec<f64>> = data
            .points()
            .iter()
            .map(|z| model.margin_grad_theta(z))
            .collect();
        let mut gram = DMatrix::<f64>::zeros(p, p);
        for g in &grads {
            for a in 0..p {
                for b in 0..p {
                    gram[(a, b)] += g[a] * g[b];
                }
            }
        }
        for a in 0..p {
            gram[(a, a)] += 1e-3;
        }
        let inv = gram.try_inverse().unwrap();
        for (j, v) in val.points().iter().enumerate() {
            let gv = DVector::from_vec(model.margin_grad_theta(v));
            let solved = &inv * gv;
            for (i, z) in data.points().iter().enumerate() {
                let w = 1.0 - model.predict_proba(&z.features)[z.label];
                let want: f64 = -w
                    * grads[i]
                        .iter()
                        .zip(solved.iter())
                        .map(|(a, b)| a * b)
                        .sum::<f64>();
                assert!(
                    (m.value(i, j) - want).abs() < 1e-8,
                    "({i},{j}): {} vs {want}",
                    m.value(i, j)
                );
            }
        }
    }

    #[test]
    fn fully_confident_training_point_gets_zero_row() {
        let arch = Architecture::Lr {
            dim: 2,
            classes: 2,
            l2_reg: 0.0,
        };
        // Saturating weights: p* for a class-0 point at (1, 0) is exactly 1.
        let model = ModelParams {
            theta: vec![400.0, 0.0, -400.0, 0.0, 0.0, 0.0],
            arch,
            train_seed: 0,
        };
        let mut points = synth_blobs(6, 2, 2, 0.05, 9).unwrap().points().to_vec();
        points.push(DataPoint {
            id: 500,
            label: 0,
            provenance: Provenance::Original,
            features: vec![1.0, 0.0],
        });
        let data = Dataset::new(2, 2, points).unwrap();
        let val = synth_blobs(3, 2, 2, 0.05, 10).unwrap();
        let cfg = TrakConfig {
            k_proj: 6,
            projection: ProjectionKind::Identity,
            ridge: Some(1e-3),
            ..TrakConfig::default()
        };
        let m = trak(&data, std::slice::from_ref(&model), &val, &cfg).unwrap();
        let row = data.index_of(500).unwrap();
        assert!(m.row(row).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn zero_ridge_on_rank_deficient_gram_reports_singularity() {
        let (data, model, val) = lr_setup(3, 6, 2);
        // k_proj far above the number of training points makes ΦᵀΦ singular.
        let cfg = TrakConfig {
            k_proj: 64,
            ridge: Some(0.0),
            ..TrakConfig::default()
        };
        match trak(&data, std::slice::from_ref(&model), &val, &cfg) {
            Err(CoreError::Singular(msg)) => assert!(msg.contains("ridge")),
            other => panic!("expected singular error, got {other:?}"),
        }
    }

    #[test]
    fn projection_seeds_preserve_rankings() {
        // 2000-parameter model: two independent projections at k = 512 must
        // agree on the broad ranking of scores. The ridge is set well above
        // the Gram spectrum: with a small ridge the inverse re-weights the
        // smallest within-span directions, which for near-parallel gradient
        // clouds are sampling noise that no two projections resolve the same
        // way. A large ridge keeps the comparison about the projection.
        let dim = 999;
        let data = synth_blobs(60, 2, dim, 0.1, 21).unwrap();
        let arch = Architecture::Lr {
            dim,
            classes: 2,
            l2_reg: 0.05,
        };
        let tcfg = TrainConfig {
            epochs: 8,
            ..TrainConfig::default()
        };
        let model = train(&arch, &data, &tcfg).unwrap();
        assert_eq!(model.arch.param_count(), 2000);
        let val = synth_blobs(20, 2, dim, 0.1, 22).unwrap();
        let run = |seed: u64| {
            let cfg = TrakConfig {
                k_proj: 512,
                seed,
                ridge: Some(1e6),
                ..TrakConfig::default()
            };
            trak(&data, std::slice::from_ref(&model), &val, &cfg).unwrap()
        };
        let a = run(1);
        let b = run(2);
        assert_ne!(a.values(), b.values());
        let rho = spearman(a.values(), b.values());
        assert!(rho >= 0.7, "spearman {rho}");
    }


    #[test]
    fn ensemble_averages_member_scores() {
        let (data, model, val) = lr_setup(4, 20, 7);
        let tcfg = TrainConfig {
            epochs: 10,
            ..TrainConfig::default()
        };
        let cfg = TrakConfig {
            k_proj: 16,
            ensemble: 3,
            ..TrakConfig::default()
        };
        let members = train_trak_ensemble(&data, &model, &tcfg, &cfg).unwrap();
        assert_eq!(members.len(), 3);
        let avg = trak(&data, &members, &val, &cfg).unwrap();
        let mut want = vec![0.0; data.len() * val.len()];
        for (r, m) in members.iter().enumerate() {
            let single_cfg = TrakConfig {
                seed: cfg.seed.wrapping_add(r as u64),
                ensemble: 1,
                ..cfg
            };
            let s = trak(&data, std::slice::from_ref(m), &val, &single_cfg).unwrap();
            for (w, v) in want.iter_mut().zip(s.values()) {
                *w += v / 3.0;
            }
        }
        for (a, b) in avg.values().iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn config_validation_rejects_bad_fields() {
        let ok = TrakConfig::default();
        assert!(ok.validate().is_ok());
        assert!(TrakConfig {
            k_proj: 0,
            ..ok
        }
        .validate()
        .is_err());
        assert!(TrakConfig {
            k_proj: MAX_PROJECTION_DIM + 1,
            ..ok
        }
        .validate()
        .is_err());
        assert!(TrakConfig {
            ridge: Some(-1.0),
            ..ok
        }
        .validate()
        .is_err());
        assert!(TrakConfig {
            subset_fraction: 0.0,
            ..ok
        }
        .validate()
        .is_err());
        let arch = Architecture::Lr {
            dim: 2,
            classes: 2,
            l2_reg: 0.0,
        };
        let model = ModelParams {
            theta: init_theta(&arch, 0).unwrap(),
            arch,
            train_seed: 0,
        };
        let data = synth_blobs(4, 2, 2, 0.1, 0).unwrap();
        let bad_identity = TrakConfig {
            k_proj: 5, // parameter count is 6
            projection: ProjectionKind::Identity,
            ..TrakConfig::default()
        };
        assert!(trak(&data, std::slice::from_ref(&model), &data, &bad_identity).is_err());
    }
}
