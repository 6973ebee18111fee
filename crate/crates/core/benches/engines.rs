//! Compares the parallel and sequential execution paths on the real
//! workloads: a full engine iteration, a convergence run swept over seeds,
//! and the variance fixed point swept over graphs.
//!
//! Build with the default `parallel` feature to get the rayon-backed path;
//! the `*_sequential` variants always run the plain-iterator fallback, so a
//! single `cargo bench` run reports both.

use criterion::{criterion_group, criterion_main, Criterion};
use dopcomp::exec;
use dopcomp::gbp::{GbpEngine, MessageInit};
use dopcomp::lsbp::{self, BeliefInit, LsbpEngine, PrecisionVector};
use dopcomp::netsim::{run, Engine, LinkModel, Termination};
use dopcomp::scenario::{
    generate_connected, generate_geometric, synthesize_truth, Kinematics, NoiseSpec, Scenario,
    TruthMode,
};
use std::hint::black_box;

fn benchmark_scenario(n: usize, seed: u64) -> Scenario {
    let kin = Kinematics::random(n, (3000.0, 4000.0), (-30.0, 30.0), seed);
    let topology =
        generate_geometric(&kin, (3000.0, 4000.0), 800.0, NoiseSpec::default(), 1.0, seed)
            .expect("valid scenario");
    let truth = synthesize_truth(
        &topology,
        TruthMode::Uniform { lo: -500.0, hi: 500.0, anchor_value: 0.0 },
        seed,
    )
    .expect("valid truth");
    Scenario::new(topology, truth, seed, false).expect("valid measurements")
}

fn lsbp_run_to_convergence(scenario: &Scenario, seed: u64) -> u64 {
    let mut engine = LsbpEngine::new(scenario, BeliefInit::UNINFORMATIVE).expect("engine");
    let link = LinkModel::new(0.8, 2, seed).expect("link model");
    let termination = Termination { threshold: 1e-9, max_iterations: 400 };
    let trace = run(&mut engine, scenario, &link, &termination, &[]).expect("run");
    trace.iterations
}

fn bench_single_iteration(c: &mut Criterion) {
    let scenario = benchmark_scenario(100, 7);
    let mut group = c.benchmark_group("single_iteration");
    group.bench_function("gbp", |b| {
        b.iter(|| {
            let mut engine = GbpEngine::new(&scenario, MessageInit::UNINFORMATIVE).unwrap();
            let outgoing = engine.begin_iteration();
            for (link, payload) in outgoing {
                engine.receive(link, payload);
            }
            engine.end_iteration();
            black_box(engine.beliefs().len())
        })
    });
    group.bench_function("lsbp", |b| {
        b.iter(|| {
            let mut engine = LsbpEngine::new(&scenario, BeliefInit::UNINFORMATIVE).unwrap();
            let outgoing = engine.begin_iteration();
            for (link, payload) in outgoing {
                engine.receive(link, payload);
            }
            engine.end_iteration();
            black_box(engine.beliefs().len())
        })
    });
    group.finish();
}

fn bench_seed_sweep(c: &mut Criterion) {
    let scenario = benchmark_scenario(60, 11);
    let seeds: Vec<u64> = (0..32).collect();
    let mut group = c.benchmark_group("convergence_seed_sweep");
    group.sample_size(10);
    group.bench_function("parallel", |b| {
        b.iter(|| {
            let iters = exec::map_indexed(seeds.len(), |i| {
                lsbp_run_to_convergence(&scenario, seeds[i])
            });
            black_box(iters.iter().sum::<u64>())
        })
    });
    group.bench_function("sequential", |b| {
        b.iter(|| {
            let iters = exec::map_indexed_seq(seeds.len(), |i| {
                lsbp_run_to_convergence(&scenario, seeds[i])
            });
            black_box(iters.iter().sum::<u64>())
        })
    });
    group.finish();
}

fn bench_fixed_point_sweep(c: &mut Criterion) {
    let graphs: Vec<_> = (0..32)
        .map(|seed| generate_connected(40, 0.2, NoiseSpec::default(), seed).expect("graph"))
        .collect();
    let solve = |topology: &dopcomp::scenario::Topology| {
        let nodes: Vec<_> =
            topology.nodes().iter().copied().filter(|&n| n != topology.anchor()).collect();
        let p0 = PrecisionVector::zeros(nodes);
        lsbp::variance_fixed_point(topology, &p0, 1e-12, 100_000).expect("fixed point")
    };
    let mut group = c.benchmark_group("variance_fixed_point_sweep");
    group.sample_size(10);
    group.bench_function("parallel", |b| {
        b.iter(|| {
            let stars = exec::map_indexed(graphs.len(), |i| solve(&graphs[i]).values()[0]);
            black_box(stars)
        })
    });
    group.bench_function("sequential", |b| {
        b.iter(|| {
            let stars = exec::map_indexed_seq(graphs.len(), |i| solve(&graphs[i]).values()[0]);
            black_box(stars)
        })
    });
    group.finish();
}

criterion_group!(benches, bench_single_iteration, bench_seed_sweep, bench_fixed_point_sweep);
criterion_main!(benches);
