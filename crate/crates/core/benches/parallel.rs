use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use isoinv::harness::{run_cell, CellSpec, StudyConfig};
use isoinv::limitdist::{sample_chernoff, ChernoffParams};
use isoinv::procedures::{bootstrap_roots, SecondStageData};
use isoinv::{Execution, Procedure};
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use rand_xoshiro::Xoshiro256PlusPlus;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn chernoff(c: &mut Criterion) {
    let params = ChernoffParams::default();
    let mut group = c.benchmark_group("chernoff_draws_2000");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| sample_chernoff(&params, 2000, exec).unwrap())
        });
    }
    group.finish();
}

fn bootstrap(c: &mut Criterion) {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(4);
    let noise = Normal::new(0.0, 0.1).unwrap();
    let (l, u) = (0.4, 0.6);
    let data = SecondStageData {
        l,
        u,
        y_at_l: (0..500).map(|_| 0.4 + noise.sample(&mut rng)).collect(),
        y_at_u: (0..500).map(|_| 0.6 + noise.sample(&mut rng)).collect(),
        weights: None,
    };
    let mut group = c.benchmark_group("bootstrap_roots_b4000_n2000");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| bootstrap_roots(&data, 0.5, 0.5, 0.5, 2000, 4000, 9, exec).unwrap())
        });
    }
    group.finish();
}

fn study_cell(c: &mut Criterion) {
    let cell = CellSpec {
        f: "f1".into(),
        sigma: 0.1,
        n: 100,
        p: 0.5,
    };
    let mut group = c.benchmark_group("pbtsp_cell_200_reps");
    group.sample_size(10);
    for (name, exec) in MODES {
        let cfg = StudyConfig {
            reps: 200,
            bootstrap: 500,
            procedures: vec![Procedure::Pbtsp],
            pair: None,
            cells: vec![cell.clone()],
            execution: exec,
            ..StudyConfig::default()
        };
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| run_cell(&cfg, &cell, Procedure::Pbtsp).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, chernoff, bootstrap, study_cell);
criterion_main!(benches);
