//! The same workloads on the rayon pool and on the sequential fallback.
//! Build with `--no-default-features` to bench the fallback alone.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use rehab_core::cohort::generate_cohort;
use rehab_core::config::Config;
use rehab_core::experiment::{evaluate_policy, fit_tebg, run_full_sweep, EvalCohort, ExperimentPlan};
use rehab_core::grouping::{cluster_kmeans, KMeansConfig};
use rehab_core::par;
use rehab_core::policy::PhysioPolicy;
use rehab_core::rng::{self, Streams};
use rehab_core::sim::World;

fn both<R>(c: &mut Criterion, name: &str, f: impl Fn() -> R) {
    let mut g = c.benchmark_group(name);
    g.sample_size(10);
    g.bench_function(BenchmarkId::from_parameter("parallel"), |b| b.iter(&f));
    g.bench_function(BenchmarkId::from_parameter("sequential"), |b| b.iter(|| par::sequential(&f)));
    g.finish();
}

fn workloads(c: &mut Criterion) {
    let config = Config::default();
    let streams = Streams::new(1);
    let world = World::sample(config.sim.clone(), &streams).unwrap();
    let train = streams.child(rng::TRAIN, &[0]);

    both(c, "cohort_1000", || {
        generate_cohort(1000, &PhysioPolicy, "pt", &world, "bench", &train).unwrap()
    });

    let cohort = generate_cohort(1000, &PhysioPolicy, "pt", &world, "bench", &train).unwrap();
    let vectors = fit_tebg(&cohort, &config, &streams, &[0]).unwrap().embedding.vectors();
    let km = KMeansConfig { restarts: 200, ..Default::default() };
    both(c, "kmeans_200_restarts", || cluster_kmeans(&vectors, &km, &streams).unwrap());

    let eval = EvalCohort::draw(&world, &streams.child(rng::EVAL, &[]), 1000);
    both(c, "evaluate_pt_1000", || evaluate_policy(&PhysioPolicy, &world, &eval).unwrap());

    let plan = ExperimentPlan {
        replicates: 2,
        train_sizes: vec![100, 300],
        weights: vec![1.0, 11.0, 20.0],
        eval_patients: 300,
        ..Default::default()
    };
    let small = Config { kmeans: KMeansConfig { restarts: 50, ..Default::default() }, ..Config::default() };
    both(c, "sweep_small", || run_full_sweep(&plan, &small).unwrap());
}

criterion_group!(benches, workloads);
criterion_main!(benches);
