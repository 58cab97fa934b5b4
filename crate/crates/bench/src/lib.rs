//! Deterministic fixtures shared by the benchmark targets: a trained
//! logistic-regression problem at a configurable size and a random score
//! matrix for exercising the payout mechanism in isolation.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use attrisim::attribution::{AttributionMethod, ContributionMatrix};
use attrisim::data::{synth_blobs, Dataset};
use attrisim::model::{train, Architecture, ModelParams, TrainConfig};

/// A blob-classification problem with a fitted model: `n_train` training
/// points, `n_val` validation points, both carved from one draw so they
/// share the class geometry.
pub fn lr_fixture(
    n_train: usize,
    n_val: usize,
    dim: usize,
    seed: u64,
) -> (Dataset, Dataset, ModelParams) {
    let all = synth_blobs(n_train + n_val, 2, dim, 0.15, seed).expect("fixture draw");
    let train_set = all
        .subset_by_indices(&(0..n_train).collect::<Vec<_>>())
        .expect("fixture train split");
    let val_set = all
        .subset_by_indices(&(n_train..n_train + n_val).collect::<Vec<_>>())
        .expect("fixture val split");
    let arch = Architecture::Lr {
        dim,
        classes: 2,
        l2_reg: 0.01,
    };
    let tcfg = TrainConfig {
        epochs: 60,
        seed,
        ..TrainConfig::default()
    };
    let model = train(&arch, &train_set, &tcfg).expect("fixture training");
    (train_set, val_set, model)
}

/// A uniformly random contribution matrix, for benchmarking the payout
/// mechanism without paying for attribution.
pub fn random_matrix(n_train: usize, n_val: usize, seed: u64) -> ContributionMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values: Vec<f64> = (0..n_train * n_val).map(|_| rng.gen_range(-1.0..1.0)).collect();
    ContributionMatrix::new(
        AttributionMethod::GradDot,
        (0..n_train as u64).collect(),
        (n_train as u64..(n_train + n_val) as u64).collect(),
        values,
    )
    .expect("fixture matrix")
}
