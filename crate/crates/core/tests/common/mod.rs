//! Shared fixtures and independent oracle implementations for the
//! integration suites. The oracles are deliberately written from scratch —
//! plain double loops and dense matrix algebra — so they can disagree with
//! the library if its optimized paths ever drift.

#![allow(dead_code)]

use nalgebra::DVector;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use attrisim::attribution::{AttributionMethod, ContributionMatrix};
use attrisim::data::{synth_blobs, Dataset};
use attrisim::model::{lr_dense_hessian, train, Architecture, ModelParams, TrainConfig};

/// Random score matrix; `tie_rate` of the entries are snapped to a coarse
/// grid so equal scores (and therefore id tie-breaks) actually occur.
pub fn random_matrix(n_train: usize, n_val: usize, seed: u64, tie_rate: f64) -> ContributionMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values: Vec<f64> = (0..n_train * n_val)
        .map(|_| {
            let v: f64 = rng.gen_range(-1.0..1.0);
            if rng.gen_bool(tie_rate) {
                (v * 4.0).round() / 4.0
            } else {
                v
            }
        })
        .collect();
    ContributionMatrix::new(
        AttributionMethod::GradDot,
        (0..n_train as u64).collect(),
        (n_train as u64..(n_train + n_val) as u64).collect(),
        values,
    )
    .expect("oracle fixture matrix")
}

/// Per-column count of `subject` ids inside the top-k, computed by a naive
/// sort of (score descending, id ascending) per column.
pub fn brute_force_counts(tau: &ContributionMatrix, subject: &[u64], k: usize) -> Vec<usize> {
    let ids = tau.train_ids();
    (0..tau.n_val())
        .map(|j| {
            let col = tau.column(j);
            let mut order: Vec<usize> = (0..ids.len()).collect();
            order.sort_by(|&a, &b| col[b].total_cmp(&col[a]).then(ids[a].cmp(&ids[b])));
            order
                .into_iter()
                .take(k)
                .filter(|&i| subject.contains(&ids[i]))
                .count()
        })
        .collect()
}

/// Captured pool fraction by direct enumeration.
pub fn brute_force_share(tau: &ContributionMatrix, subject: &[u64], k: usize) -> f64 {
    let total: usize = brute_force_counts(tau, subject, k).iter().sum();
    total as f64 / (k * tau.n_val()) as f64
}

/// (more, tied, fewer) column counts by direct per-column comparison.
pub fn brute_force_change(
    a: &ContributionMatrix,
    b: &ContributionMatrix,
    subject: &[u64],
    k: usize,
) -> (usize, usize, usize) {
    let before = brute_force_counts(a, subject, k);
    let after = brute_force_counts(b, subject, k);
    let mut out = (0, 0, 0);
    for (x, y) in before.iter().zip(&after) {
        match y.cmp(x) {
            std::cmp::Ordering::Greater => out.0 += 1,
            std::cmp::Ordering::Equal => out.1 += 1,
            std::cmp::Ordering::Less => out.2 += 1,
        }
    }
    out
}

/// A fitted binary logistic-regression problem: train and validation sets
/// carved from one blob draw, plus the trained model.
pub fn lr_problem(
    n_train: usize,
    n_val: usize,
    dim: usize,
    l2_reg: f64,
    epochs: usize,
    seed: u64,
) -> (Dataset, Dataset, ModelParams) {
    let all = synth_blobs(n_train + n_val, 2, dim, 0.15, seed).expect("blob draw");
    let train_set = all
        .subset_by_indices(&(0..n_train).collect::<Vec<_>>())
        .expect("train split");
    let val_set = all
        .subset_by_indices(&(n_train..n_train + n_val).collect::<Vec<_>>())
        .expect("val split");
    let arch = Architecture::Lr {
        dim,
        classes: 2,
        l2_reg,
    };
    let tcfg = TrainConfig {
        epochs,
        seed,
        ..TrainConfig::default()
    };
    let model = train(&arch, &train_set, &tcfg).expect("fixture training");
    (train_set, val_set, model)
}

/// Influence scores through an explicit dense Hessian factorization:
/// τ(i, j) = −∇ℓ(zᵢ)ᵀ H⁻¹ ∇ℓ(vⱼ), row-major over (train, val).
pub fn dense_influence(train_set: &Dataset, model: &ModelParams, val_set: &Dataset) -> Vec<f64> {
    let h = lr_dense_hessian(model, train_set).expect("dense hessian");
    let chol = h.cholesky().expect("hessian should be positive definite");
    let solves: Vec<DVector<f64>> = val_set
        .points()
        .iter()
        .map(|v| chol.solve(&DVector::from_vec(model.grad_theta(v))))
        .collect();
    let mut out = Vec::with_capacity(train_set.len() * val_set.len());
    for p in train_set.points() {
        let g = DVector::from_vec(model.grad_theta(p));
        for s in &solves {
            out.push(-g.dot(s));
        }
    }
    out
}
