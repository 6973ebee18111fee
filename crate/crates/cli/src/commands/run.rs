//! `dopcomp run`: one engine (or oracle) execution from a config.

use crate::build;
use crate::config::{Algorithm, ExperimentConfig};
use crate::output::OutputDir;
use anyhow::Result;
use dopcomp::analysis;
use dopcomp::gbp::GbpEngine;
use dopcomp::lsbp::LsbpEngine;
use dopcomp::netsim::{self, BeliefSnapshot, IterationRecord, RunTrace, StopReason};
use dopcomp::oracle;
use std::collections::BTreeMap;
use std::path::Path;

pub const EXIT_CONVERGED: i32 = 0;
pub const EXIT_CONFIG_ERROR: i32 = 1;
pub const EXIT_ITERATION_CAP: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;

pub fn exit_code(stop: StopReason) -> i32 {
    match stop {
        StopReason::Threshold => EXIT_CONVERGED,
        StopReason::IterationCap => EXIT_ITERATION_CAP,
        StopReason::Diverged => EXIT_DIVERGED,
    }
}

/// Runs the configured experiment and writes `trace.jsonl`, `metrics.csv`,
/// and `resolved_config.json` into the output directory. Returns the exit
/// code implied by the stop reason.
pub fn execute(config: &ExperimentConfig, out_dir: &Path) -> Result<i32> {
    config.validate()?;
    let out = OutputDir::create(out_dir, &config.hash())?;
    out.write_json("resolved_config.json", &resolved_with_hash(config))?;

    let built = build::build_scenario(config)?;
    let scenario = &built.scenario;

    let trace = match config.algorithm {
        Algorithm::Ml => oracle_trace(config, scenario)?,
        Algorithm::Gbp => {
            let mut engine = GbpEngine::new(scenario, build::message_init(config))?;
            netsim::run(
                &mut engine,
                scenario,
                &build::link_model(config)?,
                &build::termination(config),
                &config.to_events(),
            )?
        }
        Algorithm::Lsbp => {
            let mut engine = LsbpEngine::new(scenario, build::belief_init(config))?;
            netsim::run(
                &mut engine,
                scenario,
                &build::link_model(config)?,
                &build::termination(config),
                &config.to_events(),
            )?
        }
    };

    out.write_jsonl("trace.jsonl", &trace.to_jsonl())?;
    let metrics = analysis::metrics_from_trace(&trace, config.b_norm)?;
    out.write_csv("metrics.csv", &analysis::metrics_to_csv(&metrics))?;
    Ok(exit_code(trace.stop))
}

pub fn resolved_with_hash(config: &ExperimentConfig) -> String {
    let mut value: serde_json::Value =
        serde_json::from_str(&config.resolved_json()).expect("canonical json");
    value
        .as_object_mut()
        .expect("object")
        .insert("config_hash".to_string(), serde_json::Value::String(config.hash()));
    serde_json::to_string_pretty(&value).expect("serializable")
}

/// The centralized reference presented as a one-iteration trace: estimate
/// means with the per-node CRLB as the belief variance.
fn oracle_trace(
    config: &ExperimentConfig,
    scenario: &dopcomp::scenario::Scenario,
) -> Result<RunTrace> {
    let system = oracle::build_system(&scenario.topology, &scenario.measurements)?;
    let estimates = oracle::ml_estimate(&system, scenario.truth.anchor_value())?;
    let bounds = oracle::crlb(&system)?;
    let crlb_avg = oracle::crlb_average(&scenario.topology, &scenario.measurements)?;

    let mut beliefs: BTreeMap<dopcomp::NodeId, Option<BeliefSnapshot>> = BTreeMap::new();
    let anchor = scenario.topology.anchor();
    beliefs.insert(
        anchor,
        Some(BeliefSnapshot { mean: scenario.truth.anchor_value(), variance: 0.0 }),
    );
    for &node in scenario.topology.nodes() {
        if node == anchor {
            continue;
        }
        let snap = estimates
            .get(&node)
            .map(|&mean| BeliefSnapshot { mean, variance: bounds[&node] });
        beliefs.insert(node, snap);
    }

    Ok(RunTrace {
        algorithm: "ml".to_string(),
        scenario_digest: scenario.digest(),
        pdr: 1.0,
        seed: config.seed,
        records: vec![IterationRecord {
            iteration: 1,
            n_nodes: scenario.topology.node_count() as u32,
            delivered: 0,
            dropped: 0,
            delayed: 0,
            max_delta: Some(0.0),
            payloads_cumulative: 0,
            crlb_avg,
            beliefs,
            truth: scenario.truth.offsets().clone(),
        }],
        stop: StopReason::Threshold,
        iterations: 1,
        diverged_nodes: Vec::new(),
    })
}
