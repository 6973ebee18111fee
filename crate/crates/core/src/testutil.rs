//! Shared fixtures for the in-crate unit tests.

use crate::scenario::{Edge, EdgeParams, GroundTruth, Scenario, Topology};
use crate::NodeId;
use std::collections::{BTreeMap, BTreeSet};

/// Topology on explicit edges with the same noise variance everywhere.
pub fn topology_with_edges(anchor: NodeId, pairs: &[(NodeId, NodeId)], sigma2: f64) -> Topology {
    let mut nodes = BTreeSet::new();
    let mut edges = BTreeMap::new();
    nodes.insert(anchor);
    for &(a, b) in pairs {
        nodes.insert(a);
        nodes.insert(b);
        edges.insert(Edge::new(a, b), EdgeParams { noise_var: sigma2, reliability: 1.0 });
    }
    Topology::new(anchor, nodes, edges).expect("valid fixture")
}

pub fn truth_of(anchor: NodeId, entries: &[(NodeId, f64)]) -> GroundTruth {
    GroundTruth::new(anchor, entries.iter().copied().collect()).expect("valid truth")
}

/// Triangle 1-2-3 with anchor 1, unit noise variance, offsets (100, 200,
/// 300), exact (noiseless) measurements (300, 400, 500).
pub fn noiseless_triangle() -> Scenario {
    let topology = topology_with_edges(1, &[(1, 2), (1, 3), (2, 3)], 1.0);
    let truth = truth_of(1, &[(1, 100.0), (2, 200.0), (3, 300.0)]);
    Scenario::new(topology, truth, 0, true).expect("valid scenario")
}

/// Path 1-2-3 with anchor 1, unit noise, offsets (1, 2, 3), noiseless
/// measurements (3, 5).
pub fn noiseless_path3() -> Scenario {
    let topology = topology_with_edges(1, &[(1, 2), (2, 3)], 1.0);
    let truth = truth_of(1, &[(1, 1.0), (2, 2.0), (3, 3.0)]);
    Scenario::new(topology, truth, 0, true).expect("valid scenario")
}

/// Nine-node rooted tree fixture: 1 is the root, 2/3 its children, 4/5
/// under 2, 6/7 under 3, 8/9 under 4.
pub fn nine_node_tree(sigma2: f64) -> Topology {
    topology_with_edges(
        1,
        &[(1, 2), (1, 3), (2, 4), (2, 5), (3, 6), (3, 7), (4, 8), (4, 9)],
        sigma2,
    )
}
