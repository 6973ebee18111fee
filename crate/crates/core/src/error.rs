use crate::NodeId;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("need at least {min} nodes, got {got}")]
    TooFewNodes { min: usize, got: usize },
    #[error("communication range must be positive, got {0}")]
    NonPositiveRange(f64),
    #[error("node {node} position ({x}, {y}) lies outside the {w}x{h} area")]
    OutsideArea { node: NodeId, x: f64, y: f64, w: f64, h: f64 },
    #[error("anchor {0} is not among the topology nodes")]
    AnchorMissing(NodeId),
    #[error("edge references unknown node {0}")]
    UnknownNode(NodeId),
    #[error("self-loop on node {0}")]
    SelfLoop(NodeId),
    #[error("edge noise variance must be positive, got {value} on ({a}, {b})")]
    NonPositiveVariance { a: NodeId, b: NodeId, value: f64 },
    #[error("link reliability must lie in (0, 1], got {value} on ({a}, {b})")]
    BadReliability { a: NodeId, b: NodeId, value: f64 },
    #[error("duplicate kinematic entry for node {0}")]
    DuplicateKinematics(NodeId),
    #[error("no kinematic state for node {0}")]
    MissingKinematics(NodeId),
    #[error("kinematic trace line {line}: {msg}")]
    TraceParse { line: usize, msg: String },
    #[error("empty range: lo {lo} > hi {hi}")]
    EmptyRange { lo: f64, hi: f64 },
    #[error("{name} must be positive, got {value}")]
    NonPositiveParam { name: &'static str, value: f64 },
    #[error("ground truth missing node {0}")]
    MissingTruth(NodeId),
    #[error("no measurement for edge ({0}, {1})")]
    MissingMeasurement(NodeId, NodeId),
    #[error("event would remove the anchor {0}")]
    RemovesAnchor(NodeId),
    #[error("join id {0} already present")]
    DuplicateJoin(NodeId),
    #[error("event references unknown node {0}")]
    UnknownEventNode(NodeId),
    #[error("events must be sorted by iteration and start at iteration >= 1")]
    UnsortedEvents,
    #[error("nodes {0:?} have no path to the anchor")]
    AnchorDisconnected(Vec<NodeId>),
    #[error("normal equations are singular: anchor-disconnected component")]
    SingularSystem,
    #[error("initial message precision must be nonnegative, got {0}")]
    NegativePrecision(f64),
    #[error("initial belief variance must be positive, got {0}")]
    NonPositiveInitVariance(f64),
    #[error("packet delivery ratio must lie in (0, 1], got {0}")]
    BadPdr(f64),
    #[error("delay range ({0}, {1}) is invalid")]
    BadDelayRange(u32, u32),
    #[error("delivery report references unknown link ({0} -> {1})")]
    UnknownDeliveryLink(NodeId, NodeId),
    #[error("fixed-point iteration did not converge within {0} iterations")]
    MaxIterExceeded(u64),
    #[error("node {0} has no neighbors")]
    IsolatedNode(NodeId),
    #[error("no informative non-anchor beliefs to average")]
    NoInformativeNodes,
    #[error("traces were produced from different scenarios")]
    ScenarioMismatch,
    #[error("trace log is malformed: {0}")]
    TraceLog(String),
}
