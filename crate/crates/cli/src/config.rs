//! JSON experiment configuration: schema, defaults, validation, and the
//! resolved-config echo.
//!
//! A config document is a single JSON object; unknown keys are rejected.
//! Every field has a default, so `{}` is a valid config, and the resolved
//! echo written next to the outputs spells out every effective value plus a
//! content hash. Command-line flags override individual fields before
//! validation.

use anyhow::{bail, Context, Result};
use dopcomp::scenario::{DynamicEvent, EventKind, JoinEdge};
use dopcomp::NodeId;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub scenario: ScenarioConfig,
    pub algorithm: Algorithm,
    pub link: LinkConfig,
    pub termination: TerminationConfig,
    pub init: InitConfig,
    pub events: Vec<EventConfig>,
    pub seed: u64,
    /// Error normalization used in the MSE metric.
    pub b_norm: f64,
    pub out_dir: String,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenario: ScenarioConfig::default(),
            algorithm: Algorithm::Lsbp,
            link: LinkConfig::default(),
            termination: TerminationConfig::default(),
            init: InitConfig::default(),
            events: Vec::new(),
            seed: 1,
            b_norm: 1.0,
            out_dir: "out".to_string(),
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Gbp,
    Lsbp,
    /// Centralized maximum-likelihood reference instead of an iterative run.
    Ml,
}

impl Algorithm {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "gbp" => Ok(Algorithm::Gbp),
            "lsbp" => Ok(Algorithm::Lsbp),
            "ml" => Ok(Algorithm::Ml),
            other => bail!("unknown algorithm `{other}` (expected gbp, lsbp, or ml)"),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub generator: GeneratorConfig,
    pub noise: NoiseConfig,
    /// Zero-variance override: measurements become exact pairwise sums.
    pub noiseless: bool,
    pub truth: TruthConfig,
    /// Sample measurements from per-edge radial closing speeds instead of
    /// the additive model; quantifies the model error on planar motion.
    pub radial_mismatch: bool,
    /// Per-edge delivery reliability factor, composed with the link pdr.
    pub reliability: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            generator: GeneratorConfig::Geometric {
                n: 100,
                area: [3000.0, 4000.0],
                comm_range: 800.0,
                speed_range: [-30.0, 30.0],
            },
            noise: NoiseConfig::Uniform { lo: 0.5, hi: 2.0 },
            noiseless: false,
            truth: TruthConfig::Uniform { lo: -500.0, hi: 500.0, anchor_value: 0.0 },
            radial_mismatch: false,
            reliability: 1.0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "snake_case")]
pub enum GeneratorConfig {
    /// Random placement in an area; edges within communication range.
    Geometric { n: usize, area: [f64; 2], comm_range: f64, speed_range: [f64; 2] },
    /// Vehicles on a line at fixed spacing (highway).
    Line { n: usize, spacing: f64, comm_range: f64, speed_range: [f64; 2] },
    /// Random spanning tree.
    Tree { n: usize },
    /// Fully connected graph.
    Complete { n: usize },
    /// Positions and velocities from a kinematic trace file.
    TraceFile { path: String, area: [f64; 2], comm_range: f64 },
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "snake_case")]
pub enum NoiseConfig {
    Uniform { lo: f64, hi: f64 },
    Fixed { value: f64 },
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "snake_case")]
pub enum TruthConfig {
    Uniform { lo: f64, hi: f64, anchor_value: f64 },
    /// Offsets from axis-projected speeds: `f = vx * f0 / c`.
    Kinematic { f0: f64, c: f64 },
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct LinkConfig {
    pub pdr: f64,
    pub d_max: u32,
}

impl Default for LinkConfig {
    fn default() -> Self {
        Self { pdr: 1.0, d_max: 3 }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct TerminationConfig {
    pub th: f64,
    pub l_max: u64,
}

impl Default for TerminationConfig {
    fn default() -> Self {
        Self { th: 1e-6, l_max: 200 }
    }
}

/// Initial conditions. For the broadcast engine this is the per-node belief;
/// for classical BP the same variance seeds every inbox slot (as message
/// precision `1 / variance`). `"uninformative"` starts from zero precision.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct InitConfig {
    pub variance: VarianceSpec,
    pub mean: f64,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self { variance: VarianceSpec::UNINFORMATIVE, mean: 0.0 }
    }
}

/// Either a positive variance or the string `"uninformative"`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum VarianceSpec {
    Value(f64),
    Named(UninformativeTag),
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum UninformativeTag {
    Uninformative,
}

impl VarianceSpec {
    pub const UNINFORMATIVE: VarianceSpec = VarianceSpec::Named(UninformativeTag::Uninformative);

    pub fn as_option(&self) -> Option<f64> {
        match self {
            VarianceSpec::Value(v) => Some(*v),
            VarianceSpec::Named(_) => None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct EventConfig {
    pub at_iteration: u64,
    pub action: ActionConfig,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "snake_case")]
pub enum ActionConfig {
    Leave { node: NodeId },
    Join { id: NodeId, truth_offset: f64, edges: Vec<JoinEdgeConfig> },
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct JoinEdgeConfig {
    pub to: NodeId,
    pub sigma2: f64,
    #[serde(default = "default_reliability")]
    pub reliability: f64,
}

fn default_reliability() -> f64 {
    1.0
}

/// Flag-level overrides applied on top of the loaded document.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<String>,
    pub algorithm: Option<String>,
    pub pdr: Option<f64>,
    pub th: Option<f64>,
    pub l_max: Option<u64>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        Self::from_json(&text).with_context(|| format!("in config {}", path.display()))
    }

    /// Parses strictly: unknown keys are schema errors with line/column
    /// diagnostics from the JSON parser.
    pub fn from_json(text: &str) -> Result<Self> {
        let config: ExperimentConfig = serde_json::from_str(text)?;
        Ok(config)
    }

    pub fn apply_overrides(&mut self, overrides: &Overrides) -> Result<()> {
        if let Some(seed) = overrides.seed {
            self.seed = seed;
        }
        if let Some(out) = &overrides.out {
            self.out_dir = out.clone();
        }
        if let Some(name) = &overrides.algorithm {
            self.algorithm = Algorithm::parse(name)?;
        }
        if let Some(pdr) = overrides.pdr {
            self.link.pdr = pdr;
        }
        if let Some(th) = overrides.th {
            self.termination.th = th;
        }
        if let Some(l_max) = overrides.l_max {
            self.termination.l_max = l_max;
        }
        Ok(())
    }

    /// Field-level checks beyond the schema. Every message names the field.
    pub fn validate(&self) -> Result<()> {
        let n = match &self.scenario.generator {
            GeneratorConfig::Geometric { n, comm_range, area, .. } => {
                if *comm_range <= 0.0 {
                    bail!("scenario.generator.comm_range: must be positive");
                }
                if area[0] <= 0.0 || area[1] <= 0.0 {
                    bail!("scenario.generator.area: must be positive");
                }
                *n
            }
            GeneratorConfig::Line { n, spacing, comm_range, .. } => {
                if *spacing <= 0.0 {
                    bail!("scenario.generator.spacing: must be positive");
                }
                if *comm_range <= 0.0 {
                    bail!("scenario.generator.comm_range: must be positive");
                }
                *n
            }
            GeneratorConfig::Tree { n } | GeneratorConfig::Complete { n } => *n,
            GeneratorConfig::TraceFile { comm_range, .. } => {
                if *comm_range <= 0.0 {
                    bail!("scenario.generator.comm_range: must be positive");
                }
                2
            }
        };
        if n < 2 {
            bail!("scenario.generator.n: need at least 2 nodes");
        }
        match self.scenario.noise {
            NoiseConfig::Uniform { lo, hi } => {
                if !(lo > 0.0) || lo > hi {
                    bail!("scenario.noise: need 0 < lo <= hi");
                }
            }
            NoiseConfig::Fixed { value } => {
                if !(value > 0.0) {
                    bail!("scenario.noise.value: must be positive");
                }
            }
        }
        match self.scenario.truth {
            TruthConfig::Uniform { lo, hi, .. } => {
                if lo > hi {
                    bail!("scenario.truth: empty range (lo > hi)");
                }
            }
            TruthConfig::Kinematic { f0, c } => {
                if !(f0 > 0.0) {
                    bail!("scenario.truth.f0: must be positive");
                }
                if !(c > 0.0) {
                    bail!("scenario.truth.c: must be positive");
                }
                if matches!(
                    self.scenario.generator,
                    GeneratorConfig::Tree { .. } | GeneratorConfig::Complete { .. }
                ) {
                    bail!("scenario.truth: kinematic truth needs a generator with positions");
                }
            }
        }
        if self.scenario.radial_mismatch {
            if !matches!(self.scenario.truth, TruthConfig::Kinematic { .. }) {
                bail!("scenario.radial_mismatch: requires kinematic truth");
            }
            if !self.events.is_empty() {
                bail!("scenario.radial_mismatch: not supported together with events");
            }
        }
        if !(self.scenario.reliability > 0.0 && self.scenario.reliability <= 1.0) {
            bail!("scenario.reliability: must lie in (0, 1]");
        }
        if !(self.link.pdr > 0.0 && self.link.pdr <= 1.0) {
            bail!("link.pdr: must lie in (0, 1]; zero would starve the buffers");
        }
        if self.termination.th < 0.0 {
            bail!("termination.th: must be nonnegative");
        }
        if self.termination.l_max == 0 {
            bail!("termination.l_max: must be at least 1");
        }
        if let VarianceSpec::Value(v) = self.init.variance {
            if !(v > 0.0) {
                bail!("init.variance: must be positive or \"uninformative\"");
            }
        }
        if !(self.b_norm > 0.0) {
            bail!("b_norm: must be positive");
        }
        let mut last = 0u64;
        for (i, event) in self.events.iter().enumerate() {
            if event.at_iteration < 1 {
                bail!("events[{i}].at_iteration: must be >= 1");
            }
            if event.at_iteration < last {
                bail!("events[{i}].at_iteration: events must be sorted");
            }
            last = event.at_iteration;
            if let ActionConfig::Join { edges, .. } = &event.action {
                for (j, edge) in edges.iter().enumerate() {
                    if !(edge.sigma2 > 0.0) {
                        bail!("events[{i}].action.edges[{j}].sigma2: must be positive");
                    }
                    if !(edge.reliability > 0.0 && edge.reliability <= 1.0) {
                        bail!("events[{i}].action.edges[{j}].reliability: must lie in (0, 1]");
                    }
                }
            }
        }
        Ok(())
    }

    pub fn to_events(&self) -> Vec<DynamicEvent> {
        self.events
            .iter()
            .map(|e| DynamicEvent {
                at_iteration: e.at_iteration,
                kind: match &e.action {
                    ActionConfig::Leave { node } => EventKind::Leave(*node),
                    ActionConfig::Join { id, truth_offset, edges } => EventKind::Join {
                        id: *id,
                        truth_offset: *truth_offset,
                        edges: edges
                            .iter()
                            .map(|e| JoinEdge {
                                to: e.to,
                                noise_var: e.sigma2,
                                reliability: e.reliability,
                            })
                            .collect(),
                    },
                },
            })
            .collect()
    }

    /// Canonical serialization of the fully resolved config.
    pub fn resolved_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Stable content hash of the resolved config, hex-encoded.
    pub fn hash(&self) -> String {
        format!("{:016x}", dopcomp::seeds::fnv1a(self.resolved_json().as_bytes()))
    }
}
