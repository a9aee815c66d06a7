use criterion::{criterion_group, criterion_main, Criterion};
use feedshape_core::ecosystem::{simulate, SimPlan};
use feedshape_core::models::{auroc, fit_gbt_raw, fit_logistic, GbtParams, LogisticOptions, Matrix};
use feedshape_core::pipeline::{self, LabConfig};
use feedshape_core::rng::rng_from;
use feedshape_core::sensitivity::fit_exp_decay;
use feedshape_core::{LevelGrid, RankingPolicy};
use rand::Rng;

fn dataset(n: usize, p: usize) -> (Matrix, Vec<bool>) {
    let mut rng = rng_from(7);
    let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..p).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
    let y = rows
        .iter()
        .map(|r| {
            let m = 0.8 * r[0] - 0.5 * r[1] + r[2] * r[3] - 1.0;
            rng.random::<f64>() < 1.0 / (1.0 + (-m).exp())
        })
        .collect();
    (Matrix::from_rows(&rows), y)
}

fn models(c: &mut Criterion) {
    let (x, y) = dataset(20_000, 12);
    c.bench_function("logistic_fit_20k_x12", |b| b.iter(|| fit_logistic(&x, &y, &LogisticOptions::default()).unwrap()));
    let params = GbtParams { n_trees: 50, early_stopping: 0, ..Default::default() };
    c.bench_function("gbt_fit_20k_x12_50_trees", |b| b.iter(|| fit_gbt_raw(&x, &y, None, &params).unwrap()));

    let mut rng = rng_from(11);
    let scores: Vec<f64> = (0..100_000).map(|_| rng.random()).collect();
    let labels: Vec<bool> = (0..100_000).map(|_| rng.random::<f64>() < 0.1).collect();
    c.bench_function("auroc_100k", |b| b.iter(|| auroc(&scores, &labels).unwrap()));
}

fn sensitivity(c: &mut Criterion) {
    let grid = LevelGrid::new(vec![1.0, 2.0, 3.0, 5.0, 8.0, 13.0]).unwrap();
    let deltas = [0.05, 0.04, 0.03, 0.02, 0.012, 0.006];
    c.bench_function("fit_exp_decay_6_levels", |b| b.iter(|| fit_exp_decay(&grid, &deltas, 1e-6).unwrap()));
}

fn simulation(c: &mut Criterion) {
    let cfg = LabConfig::new(1, 2_000);
    let (eco, eng) = pipeline::build_world(&cfg).unwrap();
    let plan = SimPlan::uniform(RankingPolicy::consumer_only(), eco.n_users());
    let mut group = c.benchmark_group("simulation");
    group.sample_size(20);
    group
        .bench_function("2k_users_7_ticks", |b| b.iter(|| simulate(&eco, &eng, &plan, &cfg.simulation, 7, 3).unwrap()));
    group.finish();
}

criterion_group!(benches, models, sensitivity, simulation);
criterion_main!(benches);
