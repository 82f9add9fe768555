use adma_core::adaptive::{af_step, AdamConfig, AfState};
use adma_core::combine::{confhedge_update, dma_update_weights, ConfHedgeState, DmaCombinerState};
use adma_core::dlm;
use adma_core::engine::{run_series, StrategyConfig};
use adma_core::simgen;
use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use nalgebra::DVector;

fn filter_steps(c: &mut Criterion) {
    let series = simgen::gen_static(&simgen::STATIC_THETA, 50, 1).unwrap();
    let x: Vec<DVector<f64>> = series
        .x
        .iter()
        .map(|r| DVector::from_column_slice(r))
        .collect();
    let st = dlm::init_dlm(series.y[0], &x[0], 100.0).unwrap();
    let st = dlm::update(&st, &x[1], series.y[1], 0.99).unwrap();

    c.bench_function("dlm_update_d5", |b| {
        b.iter(|| {
            dlm::update(
                black_box(&st),
                black_box(&x[2]),
                black_box(series.y[2]),
                0.99,
            )
            .unwrap()
        })
    });

    let af = AfState::new(5, AdamConfig::default()).unwrap();
    c.bench_function("af_step_d5", |b| {
        b.iter(|| {
            af_step(
                black_box(&st),
                black_box(&af),
                black_box(&x[2]),
                black_box(series.y[2]),
            )
            .unwrap()
        })
    });
}

fn combiners(c: &mut Criterion) {
    let mut group = c.benchmark_group("combiners");
    for k in [8usize, 64, 512] {
        let ll: Vec<f64> = (0..k).map(|i| -0.5 - 0.01 * i as f64).collect();
        let dma = DmaCombinerState::uniform(k, 0.99, 0.0).unwrap();
        group.bench_with_input(BenchmarkId::new("dma_update", k), &k, |b, _| {
            b.iter(|| dma_update_weights(black_box(&dma), black_box(&ll)).unwrap())
        });
        let hedge = ConfHedgeState::new(k).unwrap();
        let losses: Vec<f64> = ll.iter().map(|v| -v).collect();
        group.bench_with_input(BenchmarkId::new("confhedge_update", k), &k, |b, _| {
            b.iter(|| confhedge_update(black_box(&hedge), black_box(&losses)).unwrap())
        });
    }
    group.finish();
}

fn strategies(c: &mut Criterion) {
    let data = simgen::gen_switching(300, 2024)
        .unwrap()
        .to_dataset()
        .unwrap();
    let mut group = c.benchmark_group("run_series_switching");
    group.sample_size(10);
    for (name, cfg) in [
        ("AR1", StrategyConfig::ar1()),
        ("DMA", StrategyConfig::dma(0.99)),
        ("eDMA", StrategyConfig::edma()),
        ("ADMA", StrategyConfig::adma()),
    ] {
        group.bench_function(name, |b| {
            b.iter(|| run_series(black_box(&cfg), black_box(&data)).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, filter_steps, combiners, strategies);
criterion_main!(benches);
