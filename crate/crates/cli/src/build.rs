//! Turns a validated config into a concrete scenario and engine inputs.

use crate::config::{ExperimentConfig, GeneratorConfig, NoiseConfig, TruthConfig};
use anyhow::{Context, Result};
use dopcomp::gbp::MessageInit;
use dopcomp::lsbp::BeliefInit;
use dopcomp::netsim::{LinkModel, Termination};
use dopcomp::scenario::{
    generate_complete, generate_geometric, generate_tree, sample_measurements_radial, Kinematics,
    NoiseSpec, Scenario, Topology, TruthMode,
};

pub struct BuiltScenario {
    pub scenario: Scenario,
    pub kinematics: Option<Kinematics>,
}

fn noise_spec(noise: &NoiseConfig) -> NoiseSpec {
    match *noise {
        NoiseConfig::Uniform { lo, hi } => NoiseSpec::Uniform { lo, hi },
        NoiseConfig::Fixed { value } => NoiseSpec::Fixed(value),
    }
}

pub fn build_scenario(config: &ExperimentConfig) -> Result<BuiltScenario> {
    let seed = config.seed;
    let noise = noise_spec(&config.scenario.noise);
    let reliability = config.scenario.reliability;

    let (topology, kinematics): (Topology, Option<Kinematics>) =
        match &config.scenario.generator {
            GeneratorConfig::Geometric { n, area, comm_range, speed_range } => {
                let kin = Kinematics::random(
                    *n,
                    (area[0], area[1]),
                    (speed_range[0], speed_range[1]),
                    seed,
                );
                let topo = generate_geometric(
                    &kin,
                    (area[0], area[1]),
                    *comm_range,
                    noise,
                    reliability,
                    seed,
                )?;
                (topo, Some(kin))
            }
            GeneratorConfig::Line { n, spacing, comm_range, speed_range } => {
                let kin =
                    Kinematics::line(*n, *spacing, (speed_range[0], speed_range[1]), seed);
                let width = *spacing * (*n as f64);
                let topo =
                    generate_geometric(&kin, (width, 1.0), *comm_range, noise, reliability, seed)?;
                (topo, Some(kin))
            }
            GeneratorConfig::Tree { n } => (generate_tree(*n, noise, seed)?, None),
            GeneratorConfig::Complete { n } => (generate_complete(*n, noise, seed)?, None),
            GeneratorConfig::TraceFile { path, area, comm_range } => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("cannot read kinematic trace {path}"))?;
                let kin = Kinematics::parse_trace(&text)?;
                let topo = generate_geometric(
                    &kin,
                    (area[0], area[1]),
                    *comm_range,
                    noise,
                    reliability,
                    seed,
                )?;
                (topo, Some(kin))
            }
        };

    let truth = match config.scenario.truth {
        TruthConfig::Uniform { lo, hi, anchor_value } => dopcomp::scenario::synthesize_truth(
            &topology,
            TruthMode::Uniform { lo, hi, anchor_value },
            seed,
        )?,
        TruthConfig::Kinematic { f0, c } => {
            let kin = kinematics
                .as_ref()
                .context("kinematic truth needs a generator with positions")?;
            dopcomp::scenario::synthesize_truth(
                &topology,
                TruthMode::Kinematic { f0, c, kinematics: kin },
                seed,
            )?
        }
    };

    let mut scenario =
        Scenario::new(topology, truth, seed, config.scenario.noiseless)?;
    if config.scenario.radial_mismatch {
        let TruthConfig::Kinematic { f0, c } = config.scenario.truth else {
            unreachable!("validated");
        };
        let kin = kinematics.as_ref().expect("validated");
        scenario.measurements = sample_measurements_radial(
            &scenario.topology,
            kin,
            f0,
            c,
            seed,
            config.scenario.noiseless,
        )?;
    }
    Ok(BuiltScenario { scenario, kinematics })
}

pub fn link_model(config: &ExperimentConfig) -> Result<LinkModel> {
    Ok(LinkModel::new(config.link.pdr, config.link.d_max, config.seed)?)
}

pub fn termination(config: &ExperimentConfig) -> Termination {
    Termination {
        threshold: config.termination.th,
        max_iterations: config.termination.l_max,
    }
}

pub fn belief_init(config: &ExperimentConfig) -> BeliefInit {
    BeliefInit { variance: config.init.variance.as_option(), mean: config.init.mean }
}

/// The same initial variance seeds classical BP's inbox slots as message
/// precision `1 / variance`.
pub fn message_init(config: &ExperimentConfig) -> MessageInit {
    match config.init.variance.as_option() {
        Some(v) => MessageInit { precision: 1.0 / v, mean: config.init.mean },
        None => MessageInit::UNINFORMATIVE,
    }
}
