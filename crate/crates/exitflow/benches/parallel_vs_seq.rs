//! Parallel vs sequential throughput on the two hot paths: a first-exit
//! batch on the 1D linear benchmark, and an importance-sampled jump-measure
//! estimate. Run with `cargo bench`, or `--no-default-features` to force
//! everything through the sequential fallback.

use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use exitflow::exit::{exit_batch, BatchSpec, ScalingPrediction};
use exitflow::fields::scalar_fields;
use exitflow::geometry::DomainSpec;
use exitflow::measures::{estimate_jump_measure, MeasureConfig};
use exitflow::noise::{SpectralMeasure, TailModel};
use exitflow::parallel::Parallelism;

fn setup() -> (Arc<exitflow::fields::FieldPair>, Arc<TailModel>, DomainSpec) {
    let fields = Arc::new(scalar_fields(|x| -x, |_| 1.0));
    let noise =
        Arc::new(TailModel::new(1.5, 1.0, 1.0, 0.0, SpectralMeasure::symmetric()).unwrap());
    let domain = DomainSpec::interval(-2.0, 2.0).unwrap();
    (fields, noise, domain)
}

fn bench_exit_batch(c: &mut Criterion) {
    let (fields, noise, domain) = setup();
    let prediction =
        ScalingPrediction::new(1, 2.0_f64.powf(-1.5), 0.0, f64::INFINITY, 1.0, noise.clone())
            .unwrap();
    let mut group = c.benchmark_group("exit_batch");
    group.sample_size(10);
    for (label, par) in [
        ("sequential", Parallelism::Sequential),
        ("parallel", Parallelism::Auto),
    ] {
        group.bench_with_input(BenchmarkId::from_parameter(label), &par, |bench, &par| {
            let spec = BatchSpec {
                etas: vec![0.05],
                truncations: vec![f64::INFINITY],
                samples_per_cell: 400,
                cap: 1_000_000,
                gamma: 1.0,
                master_seed: 11,
                parallelism: par,
                start: vec![0.0],
            };
            bench.iter(|| {
                exit_batch(&fields, &noise, &domain, &spec, std::slice::from_ref(&prediction))
                    .unwrap()
            });
        });
    }
    group.finish();
}

fn bench_measure(c: &mut Criterion) {
    let (fields, noise, domain) = setup();
    let mut group = c.benchmark_group("jump_measure_k2");
    group.sample_size(10);
    for (label, par) in [
        ("sequential", Parallelism::Sequential),
        ("parallel", Parallelism::Auto),
    ] {
        group.bench_with_input(BenchmarkId::from_parameter(label), &par, |bench, &par| {
            let mut cfg = MeasureConfig::new(0.25, 1.7, 40_000, 12);
            cfg.parallelism = par;
            let event = |x: &[f64]| !domain.contains(x);
            bench.iter(|| {
                estimate_jump_measure(&fields, &event, 2, 1.0, &noise, &cfg).unwrap()
            });
        });
    }
    group.finish();
}

criterion_group!(benches, bench_exit_batch, bench_measure);
criterion_main!(benches);
