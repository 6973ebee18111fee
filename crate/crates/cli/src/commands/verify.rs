//! `dopcomp verify`: randomized convergence and structure suites.
//!
//! Each suite prints one JSON line per check (`{"suite", "check", "passed",
//! "detail"}`) and the command exits nonzero if anything failed.

use anyhow::{bail, Result};
use dopcomp::analysis;
use dopcomp::exec;
use dopcomp::gaussian::Belief;
use dopcomp::gbp::{GbpEngine, MessageInit};
use dopcomp::lsbp::{self, BeliefInit, Feasibility, LsbpEngine, PrecisionVector};
use dopcomp::netsim::{self, Engine, LinkModel, Termination};
use dopcomp::oracle;
use dopcomp::scenario::{
    generate_connected, generate_tree, synthesize_truth, NoiseSpec, Scenario, Topology, TruthMode,
};
use dopcomp::nalgebra::DVector;
use dopcomp::seeds;

struct Report {
    failures: u32,
    checks: u32,
}

impl Report {
    fn new() -> Self {
        Self { failures: 0, checks: 0 }
    }

    fn record(&mut self, suite: &str, check: &str, passed: bool, detail: String) {
        self.checks += 1;
        if !passed {
            self.failures += 1;
        }
        println!(
            "{}",
            serde_json::json!({
                "suite": suite,
                "check": check,
                "passed": passed,
                "detail": detail,
            })
        );
    }

    fn exit_code(&self) -> i32 {
        if self.failures == 0 {
            0
        } else {
            1
        }
    }
}

pub fn execute(suite: &str, seed: u64, trials: u32) -> Result<i32> {
    let mut report = Report::new();
    match suite {
        "property2" => property2(&mut report, seed, trials),
        "theorem1" => theorem1(&mut report, seed),
        "theorem2" => theorem2(&mut report, seed),
        "tree-exactness" => tree_exactness(&mut report, seed),
        "def1" => def1(&mut report, seed),
        other => bail!(
            "unknown suite `{other}` (expected property2, theorem1, theorem2, tree-exactness, def1)"
        ),
    }
    println!(
        "{}",
        serde_json::json!({
            "suite": suite,
            "checks": report.checks,
            "failures": report.failures,
        })
    );
    Ok(report.exit_code())
}

fn random_topology(seed: u64, index: u64, max_n: usize) -> Topology {
    let mut rng = seeds::stream(seed, &[0x9e, index]);
    use rand::Rng;
    let n = rng.random_range(3..=max_n);
    let density = rng.random_range(0.1..0.6);
    generate_connected(n, density, NoiseSpec::default(), seeds::mix(seed, &[index]))
        .expect("valid graph")
}

fn scenario_for(topology: Topology, seed: u64) -> Scenario {
    let truth = synthesize_truth(
        &topology,
        TruthMode::Uniform { lo: -500.0, hi: 500.0, anchor_value: 0.0 },
        seed,
    )
    .expect("valid truth");
    Scenario::new(topology, truth, seed, false).expect("valid scenario")
}

fn non_anchor(topology: &Topology) -> Vec<dopcomp::NodeId> {
    topology.nodes().iter().copied().filter(|&n| n != topology.anchor()).collect()
}

fn property2(report: &mut Report, seed: u64, trials: u32) {
    let graphs = 100usize;
    let outcomes = exec::map_indexed(graphs, |g| {
        let topology = random_topology(seed, g as u64, 30);
        analysis::verify_property2(&topology, trials, seeds::mix(seed, &[g as u64, 0x2]))
    });
    let mut bad = 0u32;
    let mut first = String::new();
    for outcome in &outcomes {
        if !outcome.is_clean() {
            bad += 1;
            if first.is_empty() {
                let c = &outcome.counterexamples[0];
                first = format!("{}: {} at {:?}", c.property, c.detail, c.vector);
            }
        }
    }
    report.record(
        "property2",
        "randomized-range-scalability-monotonicity",
        bad == 0,
        if bad == 0 {
            format!("{graphs} graphs x {trials} vectors clean")
        } else {
            format!("{bad} graphs with counterexamples; first: {first}")
        },
    );
}

fn theorem1(report: &mut Report, seed: u64) {
    let graphs = 50usize;
    let failures: Vec<String> = exec::map_indexed(graphs, |g| {
        let topology = random_topology(seed, g as u64, 50);
        let nodes = non_anchor(&topology);
        let reference = match lsbp::variance_fixed_point(
            &topology,
            &PrecisionVector::zeros(nodes.clone()),
            1e-12,
            1_000_000,
        ) {
            Ok(p) => p,
            Err(e) => return Some(format!("graph {g}: zero start failed: {e}")),
        };
        for init_variance in [100.0, 10.0, 1.0, 0.1, 0.01] {
            let p0 = PrecisionVector::uniform(nodes.clone(), 1.0 / init_variance);
            let feasibility = lsbp::check_feasible_init(&p0, &topology);
            if feasibility != Feasibility::Infeasible {
                // Monotone trajectory claim applies to feasible starts.
                let map = lsbp::VarianceRecursion::from_topology(&topology);
                let mut current = p0.clone();
                for _ in 0..200 {
                    let next = map.apply(&current);
                    let ordered = match feasibility {
                        Feasibility::Increasing => next.ge(&current),
                        Feasibility::Decreasing => next.le(&current),
                        Feasibility::Infeasible => unreachable!(),
                    };
                    if !ordered {
                        return Some(format!(
                            "graph {g}: trajectory from variance {init_variance} not monotone"
                        ));
                    }
                    current = next;
                }
            }
            match lsbp::variance_fixed_point(&topology, &p0, 1e-12, 1_000_000) {
                Ok(p) => {
                    if p.max_abs_diff(&reference) >= 1e-8 {
                        return Some(format!(
                            "graph {g}: fixed point from variance {init_variance} drifted by {}",
                            p.max_abs_diff(&reference)
                        ));
                    }
                }
                Err(e) => return Some(format!("graph {g}: start {init_variance} failed: {e}")),
            }
        }
        None
    })
    .into_iter()
    .flatten()
    .collect();
    report.record(
        "theorem1",
        "multi-start-unique-fixed-point",
        failures.is_empty(),
        if failures.is_empty() {
            format!("{graphs} graphs, 6 starts each, agreement within 1e-8")
        } else {
            failures.join("; ")
        },
    );
}

fn theorem2(report: &mut Report, seed: u64) {
    let graphs = 100usize;
    let failures: Vec<String> = exec::map_indexed(graphs, |g| {
        let scenario = scenario_for(random_topology(seed, g as u64, 50), seed);
        let nodes = non_anchor(&scenario.topology);
        let p_star = match lsbp::variance_fixed_point(
            &scenario.topology,
            &PrecisionVector::zeros(nodes),
            1e-13,
            1_000_000,
        ) {
            Ok(p) => p,
            Err(e) => return Some(format!("graph {g}: fixed point failed: {e}")),
        };
        let k = match lsbp::build_k_matrix(
            &scenario.topology,
            &scenario.measurements,
            &p_star,
            scenario.truth.anchor_value(),
        ) {
            Ok(k) => k,
            Err(e) => return Some(format!("graph {g}: weight matrix failed: {e}")),
        };
        let rho = analysis::spectral_radius(&k.matrix);
        if rho >= 1.0 {
            return Some(format!("graph {g}: spectral radius {rho} >= 1"));
        }
        let direct = match k.fixed_point_solve() {
            Ok(v) => v,
            Err(e) => return Some(format!("graph {g}: direct solve failed: {e}")),
        };
        let mut rng = seeds::stream(seed, &[0x3, g as u64]);
        use rand::Rng;
        for start in 0..5u64 {
            let mu0 =
                DVector::from_fn(direct.nrows(), |_, _| rng.random_range(-1000.0..1000.0));
            let sync = k.iterate_sync(&mu0, 1e-12, 1_000_000);
            let asynch = k.iterate_async(&mu0, 3, seeds::mix(seed, &[g as u64, start]), 1e-12, 2_000_000);
            match (sync, asynch) {
                (Ok(s), Ok(a)) => {
                    if (&s - &direct).amax() >= 1e-8 || (&a - &direct).amax() >= 1e-8 {
                        return Some(format!("graph {g}: limits disagree beyond 1e-8"));
                    }
                }
                _ => return Some(format!("graph {g}: mean iteration failed to settle")),
            }
        }
        None
    })
    .into_iter()
    .flatten()
    .collect();
    report.record(
        "theorem2",
        "substochastic-radius-and-mean-limits",
        failures.is_empty(),
        if failures.is_empty() {
            format!("{graphs} graphs: radius < 1; sync and async limits within 1e-8")
        } else {
            failures.join("; ")
        },
    );
}

fn tree_exactness(report: &mut Report, seed: u64) {
    let trees = 20usize;
    let failures: Vec<String> = exec::map_indexed(trees, |t| {
        let mut rng = seeds::stream(seed, &[0x7, t as u64]);
        use rand::Rng;
        let n = rng.random_range(2..=20);
        let topology =
            generate_tree(n, NoiseSpec::default(), seeds::mix(seed, &[t as u64, 1])).expect("tree");
        let scenario = scenario_for(topology, seeds::mix(seed, &[t as u64, 2]));
        let system = match oracle::build_system(&scenario.topology, &scenario.measurements) {
            Ok(s) => s,
            Err(e) => return Some(format!("tree {t}: system build failed: {e}")),
        };
        let ml = match oracle::ml_estimate(&system, scenario.truth.anchor_value()) {
            Ok(m) => m,
            Err(e) => return Some(format!("tree {t}: oracle failed: {e}")),
        };

        let termination = Termination { threshold: 1e-13, max_iterations: 5_000 };
        let link = LinkModel::reliable(seed);
        let mut gbp_engine = GbpEngine::new(&scenario, MessageInit::UNINFORMATIVE).expect("engine");
        let mut lsbp_engine = LsbpEngine::new(&scenario, BeliefInit::UNINFORMATIVE).expect("engine");
        for (name, result) in [
            ("classical", netsim::run(&mut gbp_engine, &scenario, &link, &termination, &[])),
            ("broadcast", netsim::run(&mut lsbp_engine, &scenario, &link, &termination, &[])),
        ] {
            if let Err(e) = result {
                return Some(format!("tree {t}: {name} run failed: {e}"));
            }
        }

        for (node, expected) in &ml {
            let g: &Belief = &Engine::beliefs(&gbp_engine)[node];
            let l: &Belief = &Engine::beliefs(&lsbp_engine)[node];
            if (g.mean - expected).abs() > 1e-9 {
                return Some(format!("tree {t}: classical BP off by {}", (g.mean - expected).abs()));
            }
            if (l.mean - expected).abs() > 1e-9 {
                return Some(format!("tree {t}: broadcast BP off by {}", (l.mean - expected).abs()));
            }
        }
        None
    })
    .into_iter()
    .flatten()
    .collect();
    report.record(
        "tree-exactness",
        "converged-means-equal-ml",
        failures.is_empty(),
        if failures.is_empty() {
            format!("{trees} random trees within 1e-9 of the centralized estimate")
        } else {
            failures.join("; ")
        },
    );
}

fn def1(report: &mut Report, seed: u64) {
    // Long lossy run: buffer stamps must never regress and the staleness
    // lag stays within the bound implied by the drop rate and delay cap.
    let scenario = scenario_for(random_topology(seed, 0, 12), seed);
    let mut engine = GbpEngine::new(&scenario, MessageInit::UNINFORMATIVE).expect("engine");
    let model = LinkModel::new(0.5, 2, seed).expect("model");
    let mut in_flight: std::collections::BTreeMap<
        u64,
        Vec<(dopcomp::gaussian::DirectedLink, dopcomp::gaussian::GaussianMessage)>,
    > = Default::default();
    let mut last_stamps: std::collections::BTreeMap<dopcomp::gaussian::DirectedLink, u64> =
        Default::default();
    let mut regressions = 0u32;
    let mut max_lag = 0u64;
    let rounds = 2_000u64;
    for l in 1..=rounds {
        let outgoing = engine.begin_iteration();
        if let Some(due) = in_flight.remove(&l) {
            for (link, payload) in due {
                engine.receive(link, payload);
            }
        }
        let delivery = netsim::draw_delivery(&model, &scenario.topology, l);
        for (link, payload) in outgoing {
            match delivery.outcome(link).expect("known link") {
                netsim::LinkOutcome::Dropped => {}
                netsim::LinkOutcome::Delivered { delay: 0 } => engine.receive(link, payload),
                netsim::LinkOutcome::Delivered { delay } => {
                    in_flight.entry(l + u64::from(delay)).or_default().push((link, payload))
                }
            }
        }
        engine.end_iteration();
        for (link, msg) in engine.inbox() {
            if last_stamps.get(link).is_some_and(|prev| msg.stamp < *prev) {
                regressions += 1;
            }
            last_stamps.insert(*link, msg.stamp);
            max_lag = max_lag.max(l - msg.stamp);
        }
    }
    report.record(
        "def1",
        "stamps-nondecreasing",
        regressions == 0,
        format!("{regressions} regressions over {rounds} iterations"),
    );
    let bound = 50;
    report.record(
        "def1",
        "staleness-lag-bounded",
        max_lag <= bound,
        format!("max lag {max_lag} against bound {bound} at pdr 0.5, delay cap 2"),
    );
}
