//! `dopcomp preset`: canned desk-scale experiments, one CSV per curve.
//!
//! - `fig6`: belief-variance convergence of one tracked node for initial
//!   variances 100, 10, 1, 0.1, 0.01 at 80% delivery.
//! - `fig7`: average-MSE-vs-iteration curves for both engines at 60% and
//!   80% delivery, with the CRLB average alongside.
//! - `fig9`: the dynamic scenario (four vehicles leave at iteration 5,
//!   replacements join at 10 and 11) for both engines.
//! - `fig10`: per-iteration message counts on fully connected graphs,
//!   70..=120 vehicles.
//! - `fig11`: highway line topology versus a fully connected reference at
//!   matched size and noise.
//!
//! `--scale` shrinks or grows the vehicle counts of the simulation presets;
//! `--seed` reseeds everything. Identical `(preset, seed, scale)` invocations
//! produce byte-identical files.

use crate::build;
use crate::commands::run::resolved_with_hash;
use crate::config::{
    ActionConfig, Algorithm, EventConfig, ExperimentConfig, GeneratorConfig, JoinEdgeConfig,
    ScenarioConfig, TerminationConfig, VarianceSpec,
};
use crate::output::OutputDir;
use anyhow::{bail, Result};
use dopcomp::analysis;
use dopcomp::exec;
use dopcomp::gbp::{self, GbpEngine};
use dopcomp::lsbp::{self, LsbpEngine};
use dopcomp::netsim::{self, RunTrace};
use dopcomp::scenario::Scenario;
use dopcomp::NodeId;
use std::fmt::Write as _;
use std::path::Path;

pub fn execute(name: &str, seed: u64, scale: f64, out_dir: &Path) -> Result<i32> {
    if !(scale > 0.0) {
        bail!("--scale must be positive");
    }
    match name {
        "fig6" => fig6(seed, scale, out_dir),
        "fig7" => fig7(seed, scale, out_dir),
        "fig9" => fig9(seed, scale, out_dir),
        "fig10" => fig10(seed, out_dir),
        "fig11" => fig11(seed, out_dir),
        other => bail!("unknown preset `{other}` (expected fig6, fig7, fig9, fig10, fig11)"),
    }
}

fn scaled_n(base: usize, scale: f64) -> usize {
    ((base as f64 * scale).round() as usize).clamp(10, 150)
}

/// The map-style scenario shared by fig6, fig7, and fig9. The area shrinks
/// with the square root of the scale so the vehicle density, and with it
/// the connectivity, stays comparable at any scale.
fn map_config(seed: u64, scale: f64) -> ExperimentConfig {
    let n = scaled_n(100, scale);
    let stretch = (n as f64 / 100.0).sqrt();
    ExperimentConfig {
        scenario: ScenarioConfig {
            generator: GeneratorConfig::Geometric {
                n,
                area: [3000.0 * stretch, 4000.0 * stretch],
                comm_range: 800.0,
                speed_range: [-30.0, 30.0],
            },
            ..ScenarioConfig::default()
        },
        seed,
        ..ExperimentConfig::default()
    }
}

fn run_lsbp(config: &ExperimentConfig, scenario: &Scenario) -> Result<RunTrace> {
    let mut engine = LsbpEngine::new(scenario, build::belief_init(config))?;
    Ok(netsim::run(
        &mut engine,
        scenario,
        &build::link_model(config)?,
        &build::termination(config),
        &config.to_events(),
    )?)
}

fn run_gbp(config: &ExperimentConfig, scenario: &Scenario) -> Result<RunTrace> {
    let mut engine = GbpEngine::new(scenario, build::message_init(config))?;
    Ok(netsim::run(
        &mut engine,
        scenario,
        &build::link_model(config)?,
        &build::termination(config),
        &config.to_events(),
    )?)
}

fn metrics_csv(trace: &RunTrace, b_norm: f64) -> Result<String> {
    Ok(analysis::metrics_to_csv(&analysis::metrics_from_trace(trace, b_norm)?))
}

fn fig6(seed: u64, scale: f64, out_dir: &Path) -> Result<i32> {
    let mut config = map_config(seed, scale);
    config.link.pdr = 0.8;
    config.termination = TerminationConfig { th: 1e-9, l_max: 300 };
    config.validate()?;
    let out = OutputDir::create(out_dir, &config.hash())?;
    out.write_json("resolved_config.json", &resolved_with_hash(&config))?;
    let built = build::build_scenario(&config)?;

    // Track one representative non-anchor node across all starts.
    let tracked: NodeId = if built.scenario.topology.nodes().contains(&6) {
        6
    } else {
        *built.scenario.topology.nodes().iter().find(|&&n| n != 1).expect("n >= 2")
    };

    let inits = [100.0, 10.0, 1.0, 0.1, 0.01];
    let traces = exec::map_indexed(inits.len(), |i| {
        let mut c = config.clone();
        c.init.variance = VarianceSpec::Value(inits[i]);
        run_lsbp(&c, &built.scenario)
    });
    for (init, trace) in inits.iter().zip(traces) {
        let trace = trace?;
        let mut csv = String::from("iteration,init_variance,node,variance\n");
        for record in &trace.records {
            if let Some(Some(snapshot)) = record.beliefs.get(&tracked) {
                writeln!(csv, "{},{},{},{}", record.iteration, init, tracked, snapshot.variance)
                    .unwrap();
            }
        }
        let label = format!("{init}").replace('.', "_");
        out.write_csv(&format!("fig6_init{label}.csv"), &csv)?;
    }
    Ok(0)
}

fn fig7(seed: u64, scale: f64, out_dir: &Path) -> Result<i32> {
    let base = {
        let mut c = map_config(seed, scale);
        c.termination = TerminationConfig { th: 1e-9, l_max: 300 };
        c
    };
    base.validate()?;
    let out = OutputDir::create(out_dir, &base.hash())?;
    out.write_json("resolved_config.json", &resolved_with_hash(&base))?;
    let built = build::build_scenario(&base)?;

    let cases: Vec<(Algorithm, f64)> = [Algorithm::Gbp, Algorithm::Lsbp]
        .into_iter()
        .flat_map(|alg| [0.6, 0.8].map(|pdr| (alg, pdr)))
        .collect();
    let results = exec::map_indexed(cases.len(), |i| {
        let (alg, pdr) = cases[i];
        let mut c = base.clone();
        c.algorithm = alg;
        c.link.pdr = pdr;
        match alg {
            Algorithm::Gbp => run_gbp(&c, &built.scenario),
            _ => run_lsbp(&c, &built.scenario),
        }
    });
    for ((alg, pdr), trace) in cases.into_iter().zip(results) {
        let trace = trace?;
        let name = format!(
            "fig7_{}_pdr{}.csv",
            match alg {
                Algorithm::Gbp => "gbp",
                _ => "lsbp",
            },
            (pdr * 100.0) as u32
        );
        out.write_csv(&name, &metrics_csv(&trace, base.b_norm)?)?;
    }
    Ok(0)
}

/// Builds the leave/rejoin script against a concrete scenario: the four
/// departing vehicles later rejoin at their former positions, so the
/// replacement nodes reuse the departed edges, noise, and true offsets.
pub fn dynamic_script(scenario: &Scenario, leavers: &[NodeId]) -> Result<Vec<EventConfig>> {
    let mut events = Vec::new();
    for &node in leavers {
        if !scenario.topology.nodes().contains(&node) {
            bail!("dynamic script: node {node} not present in the generated scenario");
        }
        events.push(EventConfig { at_iteration: 5, action: ActionConfig::Leave { node } });
    }
    let mut fresh = scenario.topology.nodes().iter().max().copied().unwrap_or(0);
    for (idx, &node) in leavers.iter().enumerate() {
        fresh += 1;
        let edges: Vec<JoinEdgeConfig> = scenario
            .topology
            .edges()
            .iter()
            .filter(|(e, _)| e.touches(node))
            .filter(|(e, _)| !leavers.contains(&e.other(node)))
            .map(|(e, p)| JoinEdgeConfig {
                to: e.other(node),
                sigma2: p.noise_var,
                reliability: p.reliability,
            })
            .collect();
        events.push(EventConfig {
            at_iteration: if idx < 2 { 10 } else { 11 },
            action: ActionConfig::Join {
                id: fresh,
                truth_offset: scenario.truth.get(node).expect("node present"),
                edges,
            },
        });
    }
    Ok(events)
}

fn fig9(seed: u64, scale: f64, out_dir: &Path) -> Result<i32> {
    let mut config = map_config(seed, scale);
    config.link.pdr = 0.8;
    config.termination = TerminationConfig { th: 1e-9, l_max: 120 };
    config.validate()?;
    let built = build::build_scenario(&config)?;
    config.events = dynamic_script(&built.scenario, &[4, 5, 8, 10])?;
    config.validate()?;
    let out = OutputDir::create(out_dir, &config.hash())?;
    out.write_json("resolved_config.json", &resolved_with_hash(&config))?;

    for alg in [Algorithm::Gbp, Algorithm::Lsbp] {
        let mut c = config.clone();
        c.algorithm = alg;
        let trace = match alg {
            Algorithm::Gbp => run_gbp(&c, &built.scenario)?,
            _ => run_lsbp(&c, &built.scenario)?,
        };
        let name = match alg {
            Algorithm::Gbp => "fig9_gbp.csv",
            _ => "fig9_lsbp.csv",
        };
        out.write_csv(name, &metrics_csv(&trace, config.b_norm)?)?;
    }
    Ok(0)
}

fn fig10(seed: u64, out_dir: &Path) -> Result<i32> {
    let mut config = ExperimentConfig {
        scenario: ScenarioConfig {
            generator: GeneratorConfig::Complete { n: 70 },
            ..ScenarioConfig::default()
        },
        seed,
        ..ExperimentConfig::default()
    };
    config.validate()?;
    let out = OutputDir::create(out_dir, &config.hash())?;
    out.write_json("resolved_config.json", &resolved_with_hash(&config))?;

    let mut gbp_csv = String::from("n,messages_per_iteration\n");
    let mut lsbp_csv = String::from("n,messages_per_iteration\n");
    for n in 70..=120usize {
        config.scenario.generator = GeneratorConfig::Complete { n };
        let built = build::build_scenario(&config)?;
        writeln!(gbp_csv, "{n},{}", gbp::message_count_per_iteration(&built.scenario.topology))
            .unwrap();
        writeln!(
            lsbp_csv,
            "{n},{}",
            lsbp::broadcast_count_per_iteration(&built.scenario.topology)
        )
        .unwrap();
    }
    out.write_csv("fig10_gbp.csv", &gbp_csv)?;
    out.write_csv("fig10_lsbp.csv", &lsbp_csv)?;
    Ok(0)
}

fn fig11(seed: u64, out_dir: &Path) -> Result<i32> {
    let line = ExperimentConfig {
        scenario: ScenarioConfig {
            generator: GeneratorConfig::Line {
                n: 10,
                spacing: 100.0,
                comm_range: 150.0,
                speed_range: [-30.0, 30.0],
            },
            ..ScenarioConfig::default()
        },
        link: crate::config::LinkConfig { pdr: 0.8, d_max: 3 },
        termination: TerminationConfig { th: 1e-9, l_max: 500 },
        seed,
        ..ExperimentConfig::default()
    };
    line.validate()?;
    let out = OutputDir::create(out_dir, &line.hash())?;
    out.write_json("resolved_config.json", &resolved_with_hash(&line))?;

    let built_line = build::build_scenario(&line)?;
    let trace_line = run_lsbp(&line, &built_line.scenario)?;
    out.write_csv("fig11_line.csv", &metrics_csv(&trace_line, line.b_norm)?)?;

    // Fully connected reference at matched size and noise.
    let mut dense = line.clone();
    dense.scenario.generator = GeneratorConfig::Complete { n: 10 };
    let built_dense = build::build_scenario(&dense)?;
    let trace_dense = run_lsbp(&dense, &built_dense.scenario)?;
    out.write_csv("fig11_complete.csv", &metrics_csv(&trace_dense, dense.b_norm)?)?;
    Ok(0)
}
