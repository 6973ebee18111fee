//! Linear-scaling belief propagation.
//!
//! Instead of one message per directed edge, every node broadcasts its
//! current belief once per iteration and each receiver converts the stored
//! neighbor beliefs into messages locally: `C = sigma^2 + P_j` and
//! `eta = r - mu_j` per neighbor, combined into the new belief by precision
//! weighting. Per-iteration traffic is therefore the node count.
//!
//! The belief-variance update induces a map on precision vectors whose fixed
//! point exists and is unique; at that fixed point the mean update is an
//! affine iteration with a substochastic weight matrix. Both analyses live
//! here ([`VarianceRecursion`], [`KMatrix`]) and back the convergence checks
//! in [`crate::analysis`].

use crate::error::{Error, Result};
use crate::exec;
use crate::gaussian::{Belief, BeliefMap, BroadcastBelief, DirectedLink};
use crate::netsim::Engine;
use crate::scenario::{Edge, MeasurementSet, Scenario, Topology};
use crate::seeds::{self, tag};
use crate::NodeId;
use nalgebra::{DMatrix, DVector};
use std::collections::BTreeMap;

/// Initial belief per node. `variance: None` is the uninformative start;
/// `Some(v)` requires `v > 0`. The anchor ignores this and stays pinned.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BeliefInit {
    pub variance: Option<f64>,
    pub mean: f64,
}

impl BeliefInit {
    pub const UNINFORMATIVE: BeliefInit = BeliefInit { variance: None, mean: 0.0 };

    fn belief(&self) -> Belief {
        match self.variance {
            Some(v) => Belief::from_moments(self.mean, v),
            None => Belief::UNINFORMATIVE,
        }
    }
}

/// Broadcast payloads sent per iteration: one per node.
pub fn broadcast_count_per_iteration(topology: &Topology) -> usize {
    topology.node_count()
}

pub struct LsbpEngine {
    topology: Topology,
    measurements: MeasurementSet,
    anchor_value: f64,
    init: BeliefInit,
    /// Last received neighbor belief per incoming directed edge.
    inbox: BTreeMap<DirectedLink, BroadcastBelief>,
    beliefs: BeliefMap,
    iteration: u64,
}

impl LsbpEngine {
    pub fn new(scenario: &Scenario, init: BeliefInit) -> Result<Self> {
        if let Some(v) = init.variance {
            if !(v > 0.0) {
                return Err(Error::NonPositiveInitVariance(v));
            }
        }
        let mut engine = Self {
            topology: scenario.topology.clone(),
            measurements: scenario.measurements.clone(),
            anchor_value: scenario.truth.anchor_value(),
            init,
            inbox: BTreeMap::new(),
            beliefs: BeliefMap::new(),
            iteration: 0,
        };
        for &node in engine.topology.nodes() {
            engine.beliefs.insert(node, engine.initial_belief(node));
        }
        for link in engine.topology.directed_links() {
            let b = engine.beliefs[&link.from];
            engine.inbox.insert(link, BroadcastBelief::from_belief(&b, 0));
        }
        Ok(engine)
    }

    fn initial_belief(&self, node: NodeId) -> Belief {
        if node == self.topology.anchor() {
            Belief::pinned(self.anchor_value)
        } else {
            self.init.belief()
        }
    }

    pub fn inbox(&self) -> &BTreeMap<DirectedLink, BroadcastBelief> {
        &self.inbox
    }

    /// New belief of `node` from its stored neighbor beliefs. Per neighbor
    /// `j`: message variance `sigma^2 + P_j`, message mean `r - mu_j`;
    /// uninformative neighbors contribute nothing.
    pub fn incorporate(&self, node: NodeId) -> Belief {
        if node == self.topology.anchor() {
            return Belief::pinned(self.anchor_value);
        }
        let mut precision = 0.0;
        let mut weighted = 0.0;
        for &j in self.topology.neighbors(node) {
            let stored = &self.inbox[&DirectedLink::new(j, node)];
            if !stored.is_informative() {
                continue;
            }
            let edge = Edge::new(j, node);
            let c = self.topology.noise_var(edge) + stored.variance;
            let r = self.measurements.get(edge).expect("measurement per edge");
            precision += 1.0 / c;
            weighted += (r - stored.mean) / c;
        }
        if precision > 0.0 {
            Belief { mean: weighted / precision, precision }
        } else {
            Belief::UNINFORMATIVE
        }
    }

    /// Precision vector implied by the current beliefs, over non-anchor
    /// nodes ascending.
    pub fn precision_vector(&self) -> PrecisionVector {
        let anchor = self.topology.anchor();
        let entries = self
            .beliefs
            .iter()
            .filter(|(n, _)| **n != anchor)
            .map(|(n, b)| (*n, b.precision))
            .collect();
        PrecisionVector::from_entries(entries)
    }
}

impl Engine for LsbpEngine {
    type Payload = BroadcastBelief;

    fn topology(&self) -> &Topology {
        &self.topology
    }

    fn beliefs(&self) -> &BeliefMap {
        &self.beliefs
    }

    fn iteration(&self) -> u64 {
        self.iteration
    }

    fn begin_iteration(&mut self) -> Vec<(DirectedLink, BroadcastBelief)> {
        self.iteration += 1;
        let stamp = self.iteration;
        // One payload per node, copied onto each outgoing link; drops and
        // delays then hit each copy independently.
        self.topology
            .directed_links()
            .into_iter()
            .map(|link| {
                let b = self.beliefs[&link.from];
                (link, BroadcastBelief::from_belief(&b, stamp))
            })
            .collect()
    }

    fn receive(&mut self, link: DirectedLink, payload: BroadcastBelief) {
        if let Some(slot) = self.inbox.get_mut(&link) {
            if payload.stamp > slot.stamp {
                *slot = payload;
            }
        }
    }

    fn end_iteration(&mut self) {
        let nodes: Vec<NodeId> = self.topology.nodes().iter().copied().collect();
        let computed = exec::map_indexed(nodes.len(), |i| self.incorporate(nodes[i]));
        self.beliefs = nodes.into_iter().zip(computed).collect();
    }

    fn apply_scenario(&mut self, scenario: &Scenario) -> Result<()> {
        let stamp = self.iteration;
        let mut beliefs = BeliefMap::new();
        for &node in scenario.topology.nodes() {
            let belief = if node == scenario.topology.anchor() {
                Belief::pinned(self.anchor_value)
            } else {
                self.beliefs.get(&node).copied().unwrap_or_else(|| self.init.belief())
            };
            beliefs.insert(node, belief);
        }
        let mut inbox = BTreeMap::new();
        for link in scenario.topology.directed_links() {
            let slot = self.inbox.get(&link).copied().unwrap_or_else(|| {
                // Unseen neighbor: assume its initial belief until the first
                // broadcast arrives.
                let assumed = if link.from == scenario.topology.anchor() {
                    Belief::pinned(self.anchor_value)
                } else {
                    self.init.belief()
                };
                BroadcastBelief::from_belief(&assumed, stamp)
            });
            inbox.insert(link, slot);
        }
        self.beliefs = beliefs;
        self.inbox = inbox;
        self.topology = scenario.topology.clone();
        self.measurements = scenario.measurements.clone();
        Ok(())
    }

    fn payloads_per_iteration(&self) -> usize {
        broadcast_count_per_iteration(&self.topology)
    }

    fn algorithm_name(&self) -> &'static str {
        "lsbp"
    }
}

// ---------------------------------------------------------------------------
// Precision vectors and the variance recursion
// ---------------------------------------------------------------------------

/// Belief precisions of the non-anchor nodes, ascending by node id.
#[derive(Clone, Debug, PartialEq)]
pub struct PrecisionVector {
    nodes: Vec<NodeId>,
    values: Vec<f64>,
}

impl PrecisionVector {
    pub fn from_entries(entries: BTreeMap<NodeId, f64>) -> Self {
        let (nodes, values) = entries.into_iter().unzip();
        Self { nodes, values }
    }

    pub fn zeros(nodes: Vec<NodeId>) -> Self {
        let values = vec![0.0; nodes.len()];
        Self { nodes, values }
    }

    /// Every node at the same precision (`1 / variance` for a uniform
    /// initial variance).
    pub fn uniform(nodes: Vec<NodeId>, precision: f64) -> Self {
        let values = vec![precision; nodes.len()];
        Self { nodes, values }
    }

    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, node: NodeId) -> Option<f64> {
        self.nodes.binary_search(&node).ok().map(|i| self.values[i])
    }

    pub fn ge(&self, other: &Self) -> bool {
        self.values.iter().zip(&other.values).all(|(a, b)| a >= b)
    }

    pub fn le(&self, other: &Self) -> bool {
        self.values.iter().zip(&other.values).all(|(a, b)| a <= b)
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0f64, |acc, (a, b)| acc.max((a - b).abs()))
    }
}

/// Terms of one node's precision update.
#[derive(Clone, Debug)]
enum Term {
    /// Neighbor is the anchor (variance pinned to 0): contributes
    /// `1 / sigma^2` regardless of the precision vector.
    Anchor { sigma2: f64 },
    /// Non-anchor neighbor at vector index `idx`: contributes
    /// `1 / (sigma^2 + 1 / p[idx])`, zero when `p[idx] = 0`.
    Var { idx: usize, sigma2: f64 },
}

/// The synchronous belief-precision update as a map on precision vectors.
///
/// Entry `i` of the image is the precision node `i` would compute if every
/// neighbor's belief variance matched the argument vector (anchor pinned at
/// variance 0). Constructed from a topology, or from raw parts in test
/// doubles that deliberately corrupt it.
#[derive(Clone, Debug)]
pub struct VarianceRecursion {
    nodes: Vec<NodeId>,
    terms: Vec<Vec<Term>>,
}

impl VarianceRecursion {
    pub fn from_topology(topology: &Topology) -> Self {
        let anchor = topology.anchor();
        let nodes: Vec<NodeId> =
            topology.nodes().iter().copied().filter(|&n| n != anchor).collect();
        let idx_of: BTreeMap<NodeId, usize> =
            nodes.iter().enumerate().map(|(i, &n)| (n, i)).collect();
        let terms = nodes
            .iter()
            .map(|&node| {
                topology
                    .neighbors(node)
                    .iter()
                    .map(|&j| {
                        let sigma2 = topology.noise_var(Edge::new(node, j));
                        if j == anchor {
                            Term::Anchor { sigma2 }
                        } else {
                            Term::Var { idx: idx_of[&j], sigma2 }
                        }
                    })
                    .collect()
            })
            .collect();
        Self { nodes, terms }
    }

    /// Builds an arbitrary recursion; `terms[i]` pairs `(neighbor_index,
    /// sigma2)` with `None` for the anchor. Intended for test doubles.
    pub fn from_parts(nodes: Vec<NodeId>, raw: Vec<Vec<(Option<usize>, f64)>>) -> Self {
        let terms = raw
            .into_iter()
            .map(|list| {
                list.into_iter()
                    .map(|(idx, sigma2)| match idx {
                        Some(idx) => Term::Var { idx, sigma2 },
                        None => Term::Anchor { sigma2 },
                    })
                    .collect()
            })
            .collect();
        Self { nodes, terms }
    }

    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes
    }

    /// One application of the update map.
    pub fn apply(&self, p: &PrecisionVector) -> PrecisionVector {
        let values = self
            .terms
            .iter()
            .map(|list| {
                list.iter()
                    .map(|term| match *term {
                        Term::Anchor { sigma2 } => 1.0 / sigma2,
                        Term::Var { idx, sigma2 } => {
                            let prec = p.values[idx];
                            if prec > 0.0 {
                                1.0 / (sigma2 + 1.0 / prec)
                            } else {
                                0.0
                            }
                        }
                    })
                    .sum()
            })
            .collect();
        PrecisionVector { nodes: self.nodes.clone(), values }
    }

    /// Elementwise upper envelope of the map: the image when every neighbor
    /// had zero variance, `U_i = sum_j 1 / sigma_ij^2`. Every image of a
    /// positive vector stays strictly below it on entries with at least one
    /// non-anchor neighbor, and equals it where the anchor is the only
    /// neighbor.
    pub fn upper_envelope(&self) -> PrecisionVector {
        let values = self
            .terms
            .iter()
            .map(|list| {
                list.iter()
                    .map(|term| match *term {
                        Term::Anchor { sigma2 } | Term::Var { sigma2, .. } => 1.0 / sigma2,
                    })
                    .sum()
            })
            .collect();
        PrecisionVector { nodes: self.nodes.clone(), values }
    }

    /// True if entry `i` has at least one non-anchor neighbor.
    pub fn has_var_neighbor(&self, i: usize) -> bool {
        self.terms[i].iter().any(|t| matches!(t, Term::Var { .. }))
    }
}

/// Classification of an initial precision vector against one application of
/// the variance recursion.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Feasibility {
    /// `F(p0) >= p0` elementwise: the sequence increases monotonically.
    Increasing,
    /// `F(p0) <= p0` elementwise: the sequence decreases monotonically.
    Decreasing,
    /// Neither order holds; convergence is observed empirically but the
    /// monotone argument does not apply.
    Infeasible,
}

/// Classifies `p0` by evaluating the recursion once.
pub fn check_feasible_init(p0: &PrecisionVector, topology: &Topology) -> Feasibility {
    let map = VarianceRecursion::from_topology(topology);
    let image = map.apply(p0);
    if image.ge(p0) {
        Feasibility::Increasing
    } else if image.le(p0) {
        Feasibility::Decreasing
    } else {
        Feasibility::Infeasible
    }
}

/// Iterates the variance recursion to its fixed point: elementwise change
/// below `tol`.
pub fn variance_fixed_point(
    topology: &Topology,
    p0: &PrecisionVector,
    tol: f64,
    max_iter: u64,
) -> Result<PrecisionVector> {
    let map = VarianceRecursion::from_topology(topology);
    let mut current = p0.clone();
    for _ in 0..max_iter {
        let next = map.apply(&current);
        let delta = next.max_abs_diff(&current);
        current = next;
        if delta < tol {
            return Ok(current);
        }
    }
    Err(Error::MaxIterExceeded(max_iter))
}

// ---------------------------------------------------------------------------
// Mean iteration at the variance fixed point
// ---------------------------------------------------------------------------

/// The affine mean iteration `mu <- eta - K mu` at a variance fixed point.
///
/// `K` is nonnegative with row sums at most 1 and strictly below 1 on rows
/// of anchor neighbors, which drives convergence from any start. Rows and
/// columns index the non-anchor nodes ascending.
#[derive(Clone, Debug)]
pub struct KMatrix {
    pub matrix: DMatrix<f64>,
    /// Precision-weighted average of each node's measurements.
    pub xi: DVector<f64>,
    /// `xi` with the anchor's contribution folded in: the affine offset of
    /// the iteration.
    pub offset: DVector<f64>,
    pub nodes: Vec<NodeId>,
}

/// Builds the mean-iteration matrix and offsets at the precision fixed point
/// `p_star`.
pub fn build_k_matrix(
    topology: &Topology,
    measurements: &MeasurementSet,
    p_star: &PrecisionVector,
    anchor_value: f64,
) -> Result<KMatrix> {
    let anchor = topology.anchor();
    let nodes: Vec<NodeId> = p_star.nodes().to_vec();
    let idx_of: BTreeMap<NodeId, usize> =
        nodes.iter().enumerate().map(|(i, &n)| (n, i)).collect();
    let n = nodes.len();
    let mut matrix = DMatrix::zeros(n, n);
    let mut xi = DVector::zeros(n);
    let mut offset = DVector::zeros(n);

    for (row, &node) in nodes.iter().enumerate() {
        let neighbors = topology.neighbors(node);
        if neighbors.is_empty() {
            return Err(Error::IsolatedNode(node));
        }
        let mut denom = 0.0;
        let mut weighted_obs = 0.0;
        let mut anchor_weight = 0.0;
        let mut weights: Vec<(usize, f64)> = Vec::with_capacity(neighbors.len());
        for &j in neighbors {
            let edge = Edge::new(node, j);
            let variance = if j == anchor {
                0.0
            } else {
                match p_star.get(j) {
                    Some(p) if p > 0.0 => 1.0 / p,
                    _ => continue, // uninformative neighbor carries no weight
                }
            };
            let c_inv = 1.0 / (topology.noise_var(edge) + variance);
            let r = measurements
                .get(edge)
                .ok_or(Error::MissingMeasurement(edge.a(), edge.b()))?;
            denom += c_inv;
            weighted_obs += c_inv * r;
            if j == anchor {
                anchor_weight += c_inv;
            } else {
                weights.push((idx_of[&j], c_inv));
            }
        }
        for (col, w) in weights {
            matrix[(row, col)] = w / denom;
        }
        xi[row] = weighted_obs / denom;
        offset[row] = xi[row] - (anchor_weight / denom) * anchor_value;
    }

    Ok(KMatrix { matrix, xi, offset, nodes })
}

impl KMatrix {
    /// Row sums of the weight matrix.
    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.matrix.nrows()).map(|r| self.matrix.row(r).sum()).collect()
    }

    /// Direct solve of the stationarity condition `(I + K) mu = offset`.
    pub fn fixed_point_solve(&self) -> Result<DVector<f64>> {
        let n = self.matrix.nrows();
        let system = DMatrix::identity(n, n) + &self.matrix;
        system.lu().solve(&self.offset).ok_or(Error::SingularSystem)
    }

    /// Synchronous iteration `mu <- offset - K mu` until the step change
    /// drops below `tol`.
    pub fn iterate_sync(&self, mu0: &DVector<f64>, tol: f64, max_iter: u64) -> Result<DVector<f64>> {
        let mut mu = mu0.clone();
        for _ in 0..max_iter {
            let next = &self.offset - &self.matrix * &mu;
            let delta = (&next - &mu).amax();
            mu = next;
            if delta < tol {
                return Ok(mu);
            }
        }
        Err(Error::MaxIterExceeded(max_iter))
    }

    /// Totally asynchronous iteration: every entry reads each coordinate
    /// from a seeded random past within `d_max` iterations (so every value
    /// is eventually refreshed). Terminates when the change stays below
    /// `tol` for `d_max + 1` consecutive iterations.
    pub fn iterate_async(
        &self,
        mu0: &DVector<f64>,
        d_max: u32,
        seed: u64,
        tol: f64,
        max_iter: u64,
    ) -> Result<DVector<f64>> {
        let n = self.matrix.nrows();
        let depth = d_max as usize + 1;
        let mut history: Vec<DVector<f64>> = vec![mu0.clone(); depth];
        let mut calm_streak = 0u32;
        for l in 0..max_iter {
            let latest = history[(l as usize) % depth].clone();
            let mut next = DVector::zeros(n);
            for i in 0..n {
                let mut acc = self.offset[i];
                for j in 0..n {
                    let w = self.matrix[(i, j)];
                    if w == 0.0 {
                        continue;
                    }
                    // One mix per entry keeps the schedule draw cheap; a
                    // full stream here would dominate the iteration cost.
                    let draw = seeds::mix(seed, &[tag::SCHEDULE, l, i as u64, j as u64]);
                    let lag = ((draw % (u64::from(d_max) + 1)) as usize).min(l as usize);
                    let stale = &history[((l as usize) - lag) % depth];
                    acc -= w * stale[j];
                }
                next[i] = acc;
            }
            let delta = (&next - &latest).amax();
            history[((l + 1) as usize) % depth] = next;
            if delta < tol {
                calm_streak += 1;
                if calm_streak > d_max {
                    return Ok(history[((l + 1) as usize) % depth].clone());
                }
            } else {
                calm_streak = 0;
            }
        }
        Err(Error::MaxIterExceeded(max_iter))
    }
}
