//! Attribution-method throughput on a fixed desk-scale problem.

use criterion::{criterion_group, criterion_main, Criterion};

use attrisim::attribution::{
    data_shapley, grad_dot, influence_function, train_trak_ensemble, trak, CgConfig,
    ShapleyConfig, TrakConfig,
};
use attrisim::model::TrainConfig;
use attrisim_bench::lr_fixture;

fn bench_attribution(c: &mut Criterion) {
    let (train_set, val_set, model) = lr_fixture(200, 50, 6, 11);

    c.bench_function("graddot 200x50", |b| {
        b.iter(|| grad_dot(&train_set, &model, &val_set).unwrap())
    });

    let cg = CgConfig::default_for(&model.arch);
    c.bench_function("influence 200x50", |b| {
        b.iter(|| influence_function(&train_set, &model, &val_set, &cg).unwrap())
    });

    let trak_cfg = TrakConfig {
        k_proj: 64,
        seed: 11,
        ..TrakConfig::default()
    };
    let members = train_trak_ensemble(
        &train_set,
        &model,
        &TrainConfig {
            epochs: 60,
            seed: 11,
            ..TrainConfig::default()
        },
        &trak_cfg,
    )
    .unwrap();
    c.bench_function("trak 200x50 k=64", |b| {
        b.iter(|| trak(&train_set, &members, &val_set, &trak_cfg).unwrap())
    });

    let (small_train, small_val, small_model) = lr_fixture(30, 10, 6, 12);
    let shapley_cfg = ShapleyConfig {
        permutations: 5,
        retrain_epochs: 3,
        seed: 12,
        ..ShapleyConfig::default()
    };
    let tcfg = TrainConfig {
        seed: 12,
        ..TrainConfig::default()
    };
    let mut group = c.benchmark_group("shapley");
    group.sample_size(10);
    group.bench_function("shapley 30x10 perms=5", |b| {
        b.iter(|| {
            data_shapley(&small_train, &small_model.arch, &tcfg, &small_val, &shapley_cfg)
                .unwrap()
        })
    });
    group.finish();
}

criterion_group!(benches, bench_attribution);
criterion_main!(benches);
