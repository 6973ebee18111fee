//! `dopcomp gen`: materialize a scenario to disk for inspection or reuse.
//!
//! Writes `scenario.json` (nodes, edges with noise and reliability, truth,
//! measurements), `kinematics.trace` when the generator has positions, and
//! the resolved-config echo.

use crate::build;
use crate::commands::run::resolved_with_hash;
use crate::config::ExperimentConfig;
use crate::output::OutputDir;
use anyhow::Result;
use serde::Serialize;
use std::path::Path;

#[derive(Serialize)]
struct EdgeDump {
    a: u32,
    b: u32,
    noise_var: f64,
    reliability: f64,
    measurement: f64,
}

#[derive(Serialize)]
struct ScenarioDump {
    anchor: u32,
    nodes: Vec<u32>,
    truth: std::collections::BTreeMap<u32, f64>,
    edges: Vec<EdgeDump>,
    measurement_note: String,
    digest: String,
}

pub fn execute(config: &ExperimentConfig, out_dir: &Path) -> Result<i32> {
    config.validate()?;
    let out = OutputDir::create(out_dir, &config.hash())?;
    out.write_json("resolved_config.json", &resolved_with_hash(config))?;

    let built = build::build_scenario(config)?;
    let scenario = &built.scenario;
    let dump = ScenarioDump {
        anchor: scenario.topology.anchor(),
        nodes: scenario.topology.nodes().iter().copied().collect(),
        truth: scenario.truth.offsets().clone(),
        edges: scenario
            .topology
            .edges()
            .iter()
            .map(|(edge, params)| EdgeDump {
                a: edge.a(),
                b: edge.b(),
                noise_var: params.noise_var,
                reliability: params.reliability,
                measurement: scenario.measurements.get(*edge).expect("measured edge"),
            })
            .collect(),
        measurement_note: scenario.measurements.generated_with.clone(),
        digest: format!("{:016x}", scenario.digest()),
    };
    out.write_json("scenario.json", &serde_json::to_string_pretty(&dump)?)?;
    if let Some(kinematics) = &built.kinematics {
        out.write_json("kinematics.trace", &kinematics.to_trace())?;
    }
    Ok(0)
}
