//! Classical asynchronous Gaussian belief propagation.
//!
//! Every node keeps a buffer with the most recently received message per
//! incoming directed edge and, once per iteration, computes one outgoing
//! message per neighbor from that buffer (excluding the receiver's own
//! contribution). Messages travel in information form; see
//! [`crate::gaussian`].
//!
//! The anchor participates as a sender with a degenerate zero-variance
//! belief and never updates its own estimate.

use crate::error::{Error, Result};
use crate::exec;
use crate::gaussian::{Belief, BeliefMap, DirectedLink, GaussianMessage};
use crate::netsim::Engine;
use crate::scenario::{Edge, MeasurementSet, Scenario, Topology};
use crate::NodeId;
use std::collections::BTreeMap;

/// Initial contents of every inbox slot. Precision 0 is the uninformative
/// start; positive precision reproduces the conventional warm start where
/// every slot begins with the same Gaussian.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MessageInit {
    pub precision: f64,
    pub mean: f64,
}

impl MessageInit {
    pub const UNINFORMATIVE: MessageInit = MessageInit { precision: 0.0, mean: 0.0 };
}

/// Messages sent and received per iteration: one per directed edge.
pub fn message_count_per_iteration(topology: &Topology) -> usize {
    2 * topology.edge_count()
}

pub struct GbpEngine {
    topology: Topology,
    measurements: MeasurementSet,
    anchor_value: f64,
    init: MessageInit,
    inbox: BTreeMap<DirectedLink, GaussianMessage>,
    beliefs: BeliefMap,
    iteration: u64,
    // Flips the message mean to `r + prior` instead of `r - prior`; only
    // reachable from tests, where it demonstrates that the additive form
    // breaks agreement with the centralized estimator on trees.
    additive_mean: bool,
}

impl GbpEngine {
    pub fn new(scenario: &Scenario, init: MessageInit) -> Result<Self> {
        if init.precision < 0.0 || !init.precision.is_finite() {
            return Err(Error::NegativePrecision(init.precision));
        }
        let mut engine = Self {
            topology: scenario.topology.clone(),
            measurements: scenario.measurements.clone(),
            anchor_value: scenario.truth.anchor_value(),
            init,
            inbox: BTreeMap::new(),
            beliefs: BeliefMap::new(),
            iteration: 0,
            additive_mean: false,
        };
        for link in engine.topology.directed_links() {
            engine.inbox.insert(link, GaussianMessage::new(init.precision, init.mean, 0));
        }
        engine.refresh_beliefs();
        Ok(engine)
    }

    #[cfg(test)]
    pub(crate) fn set_additive_mean(&mut self, on: bool) {
        self.additive_mean = on;
    }

    pub fn inbox(&self) -> &BTreeMap<DirectedLink, GaussianMessage> {
        &self.inbox
    }

    /// Sum of buffered precisions and weighted means into `node`, excluding
    /// the message that came from `except`.
    fn cavity(&self, node: NodeId, except: NodeId) -> (f64, f64) {
        let mut precision = 0.0;
        let mut weighted = 0.0;
        for &k in self.topology.neighbors(node) {
            if k == except {
                continue;
            }
            let msg = &self.inbox[&DirectedLink::new(k, node)];
            precision += msg.precision;
            weighted += msg.weighted_mean;
        }
        (precision, weighted)
    }

    /// Outgoing message from `sender` to `receiver`, computed from the
    /// current buffer snapshot and stamped with `stamp`.
    ///
    /// The sender combines its buffered messages from everyone but the
    /// receiver into a prior with precision `q` and mean `m`, then emits
    /// precision `1 / (sigma^2 + 1/q)` and mean `r - m`. An empty or fully
    /// uninformative prior (`q = 0`) yields the uninformative message: with
    /// nothing known about the sender's own offset, the pairwise sum
    /// constrains the receiver not at all. The anchor's prior is its pinned
    /// belief, so it always emits precision `1 / sigma^2` and mean
    /// `r - anchor_value`.
    pub fn message_for(&self, sender: NodeId, receiver: NodeId, stamp: u64) -> GaussianMessage {
        let edge = Edge::new(sender, receiver);
        let sigma2 = self.topology.noise_var(edge);
        let r = self.measurements.get(edge).expect("measurement per edge");
        let sign = if self.additive_mean { 1.0 } else { -1.0 };
        if sender == self.topology.anchor() {
            return GaussianMessage::new(1.0 / sigma2, r + sign * self.anchor_value, stamp);
        }
        let (q, weighted) = self.cavity(sender, receiver);
        if q > 0.0 {
            let prior_mean = weighted / q;
            GaussianMessage::new(1.0 / (sigma2 + 1.0 / q), r + sign * prior_mean, stamp)
        } else {
            GaussianMessage::uninformative(stamp)
        }
    }

    /// Belief of `node` from its current buffer: the product of all incoming
    /// messages. The anchor's belief is pinned and never recomputed.
    pub fn belief_for(&self, node: NodeId) -> Belief {
        if node == self.topology.anchor() {
            return Belief::pinned(self.anchor_value);
        }
        let mut precision = 0.0;
        let mut weighted = 0.0;
        for &j in self.topology.neighbors(node) {
            let msg = &self.inbox[&DirectedLink::new(j, node)];
            precision += msg.precision;
            weighted += msg.weighted_mean;
        }
        if precision > 0.0 {
            Belief { mean: weighted / precision, precision }
        } else {
            Belief::UNINFORMATIVE
        }
    }

    fn refresh_beliefs(&mut self) {
        let nodes: Vec<NodeId> = self.topology.nodes().iter().copied().collect();
        let computed = exec::map_indexed(nodes.len(), |i| self.belief_for(nodes[i]));
        self.beliefs = nodes.into_iter().zip(computed).collect();
    }
}

impl Engine for GbpEngine {
    type Payload = GaussianMessage;

    fn topology(&self) -> &Topology {
        &self.topology
    }

    fn beliefs(&self) -> &BeliefMap {
        &self.beliefs
    }

    fn iteration(&self) -> u64 {
        self.iteration
    }

    fn begin_iteration(&mut self) -> Vec<(DirectedLink, GaussianMessage)> {
        self.iteration += 1;
        let stamp = self.iteration;
        let links = self.topology.directed_links();
        let payloads = exec::map_indexed(links.len(), |i| {
            self.message_for(links[i].from, links[i].to, stamp)
        });
        links.into_iter().zip(payloads).collect()
    }

    fn receive(&mut self, link: DirectedLink, payload: GaussianMessage) {
        if let Some(slot) = self.inbox.get_mut(&link) {
            if payload.stamp > slot.stamp {
                *slot = payload;
            }
        }
    }

    fn end_iteration(&mut self) {
        self.refresh_beliefs();
    }

    fn apply_scenario(&mut self, scenario: &Scenario) -> Result<()> {
        let stamp = self.iteration;
        let mut inbox = BTreeMap::new();
        for link in scenario.topology.directed_links() {
            let slot = self
                .inbox
                .get(&link)
                .copied()
                .unwrap_or_else(|| GaussianMessage::new(self.init.precision, self.init.mean, stamp));
            inbox.insert(link, slot);
        }
        self.inbox = inbox;
        self.topology = scenario.topology.clone();
        self.measurements = scenario.measurements.clone();
        self.refresh_beliefs();
        Ok(())
    }

    fn payloads_per_iteration(&self) -> usize {
        message_count_per_iteration(&self.topology)
    }

    fn algorithm_name(&self) -> &'static str {
        "gbp"
    }
}
