//! Discrete-iteration link simulator.
//!
//! Per iteration every engine payload crosses its directed link
//! independently: delivered now, delivered after a bounded random delay, or
//! dropped. Receivers keep only the newest payload per link (by computation
//! stamp), so a late straggler never clobbers fresher state. Delivery draws
//! are keyed by `(seed, link, iteration)`, making a whole run a pure function
//! of its configuration.
//!
//! Requiring a positive delivery ratio and a finite delay bound means every
//! link keeps delivering forever, which is exactly the regime in which the
//! engines' stale-buffer updates are known to converge.

use crate::error::{Error, Result};
use crate::gaussian::{max_estimate_delta, BeliefMap, DirectedLink};
use crate::oracle;
use crate::scenario::{DynamicEvent, Edge, Scenario, Topology};
use crate::seeds::{self, tag};
use crate::NodeId;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Estimates larger than this factor times the measurement scale are
/// declared divergent.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

// ---------------------------------------------------------------------------
// Link model
// ---------------------------------------------------------------------------

/// Bernoulli delivery with a bounded uniform delay, per directed link per
/// transmission. The effective delivery probability of a link is
/// `pdr * edge_reliability`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinkModel {
    pdr: f64,
    delay_min: u32,
    delay_max: u32,
    pub seed: u64,
}

impl LinkModel {
    /// Delivery ratio in (0, 1] and delays uniform on `{0, ..., d_max}`.
    pub fn new(pdr: f64, d_max: u32, seed: u64) -> Result<Self> {
        Self::with_delay_range(pdr, 0, d_max, seed)
    }

    /// Fully reliable, no delays: both engines reduce to their synchronous
    /// parallel schedules.
    pub fn reliable(seed: u64) -> Self {
        Self { pdr: 1.0, delay_min: 0, delay_max: 0, seed }
    }

    pub fn with_delay_range(pdr: f64, delay_min: u32, delay_max: u32, seed: u64) -> Result<Self> {
        if !(pdr > 0.0 && pdr <= 1.0) {
            return Err(Error::BadPdr(pdr));
        }
        if delay_min > delay_max {
            return Err(Error::BadDelayRange(delay_min, delay_max));
        }
        Ok(Self { pdr, delay_min, delay_max, seed })
    }

    pub fn pdr(&self) -> f64 {
        self.pdr
    }

    pub fn delay_bound(&self) -> u32 {
        self.delay_max
    }
}

/// Fate of one payload on one directed link.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LinkOutcome {
    Dropped,
    /// Delivered `delay` iterations after it was sent; 0 is this iteration.
    Delivered { delay: u32 },
}

/// Per-link outcomes for one iteration.
#[derive(Clone, Debug)]
pub struct DeliveryReport {
    pub outcomes: BTreeMap<DirectedLink, LinkOutcome>,
}

impl DeliveryReport {
    pub fn outcome(&self, link: DirectedLink) -> Result<LinkOutcome> {
        self.outcomes
            .get(&link)
            .copied()
            .ok_or(Error::UnknownDeliveryLink(link.from, link.to))
    }
}

/// Draws one iteration's outcomes for every directed link of the topology.
/// Each link's draw comes from its own `(seed, link, iteration)` stream, so
/// the report does not depend on evaluation order.
pub fn draw_delivery(model: &LinkModel, topology: &Topology, iteration: u64) -> DeliveryReport {
    let links = topology.directed_links();
    let outcomes = crate::exec::map_indexed(links.len(), |i| {
        let link = links[i];
        let mut rng = seeds::stream(
            model.seed,
            &[tag::DELIVERY, u64::from(link.from), u64::from(link.to), iteration],
        );
        let reliability = topology.reliability(Edge::new(link.from, link.to));
        let delivered = rng.random_range(0.0..1.0) < model.pdr * reliability;
        let outcome = if delivered {
            LinkOutcome::Delivered { delay: rng.random_range(model.delay_min..=model.delay_max) }
        } else {
            LinkOutcome::Dropped
        };
        (link, outcome)
    });
    DeliveryReport { outcomes: outcomes.into_iter().collect() }
}

// ---------------------------------------------------------------------------
// Engine abstraction
// ---------------------------------------------------------------------------

/// A message-passing estimator drivable by the simulator.
///
/// One iteration is: `begin_iteration` computes this round's outgoing
/// payloads from the pre-step buffer snapshot, arrivals are applied through
/// `receive` (newest stamp wins), and `end_iteration` recomputes beliefs.
pub trait Engine {
    type Payload: Clone;

    fn topology(&self) -> &Topology;
    fn beliefs(&self) -> &BeliefMap;
    fn iteration(&self) -> u64;
    /// Advances the iteration counter and returns the payload per directed
    /// link for this round.
    fn begin_iteration(&mut self) -> Vec<(DirectedLink, Self::Payload)>;
    /// Applies one arriving payload; keeps the buffered one if it is newer.
    fn receive(&mut self, link: DirectedLink, payload: Self::Payload);
    /// Recomputes beliefs from the post-arrival buffers.
    fn end_iteration(&mut self);
    /// Carries surviving state over to a changed scenario; joining nodes
    /// start from the engine's initial conditions.
    fn apply_scenario(&mut self, scenario: &Scenario) -> Result<()>;
    /// Payloads transmitted per iteration under the engine's own accounting.
    fn payloads_per_iteration(&self) -> usize;
    fn algorithm_name(&self) -> &'static str;
}

// ---------------------------------------------------------------------------
// Run trace
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// Every estimate moved less than the threshold.
    Threshold,
    /// The iteration cap was reached without convergence.
    IterationCap,
    /// Some estimate exceeded the divergence guard.
    Diverged,
}

/// Moments of one informative belief; uninformative beliefs are absent.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeliefSnapshot {
    pub mean: f64,
    pub variance: f64,
}

/// Everything recorded about one iteration, sufficient to recompute metrics
/// offline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: u64,
    pub n_nodes: u32,
    pub delivered: u32,
    pub dropped: u32,
    pub delayed: u32,
    /// Largest estimate change; absent right after a topology change or
    /// while some node is still uninformed.
    pub max_delta: Option<f64>,
    pub payloads_cumulative: u64,
    /// Mean CRLB of the current topology; constant between events.
    pub crlb_avg: f64,
    pub beliefs: BTreeMap<NodeId, Option<BeliefSnapshot>>,
    pub truth: BTreeMap<NodeId, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TraceHeader {
    algorithm: String,
    scenario_digest: u64,
    pdr: f64,
    seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TraceFooter {
    stop: StopReason,
    iterations: u64,
    diverged_nodes: Vec<NodeId>,
}

/// Complete record of one engine run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunTrace {
    pub algorithm: String,
    pub scenario_digest: u64,
    pub pdr: f64,
    pub seed: u64,
    pub records: Vec<IterationRecord>,
    pub stop: StopReason,
    pub iterations: u64,
    pub diverged_nodes: Vec<NodeId>,
}

impl RunTrace {
    /// Beliefs of the last recorded iteration.
    pub fn final_beliefs(&self) -> Option<&BTreeMap<NodeId, Option<BeliefSnapshot>>> {
        self.records.last().map(|r| &r.beliefs)
    }

    /// Serializes as a line-delimited log: header, one line per iteration,
    /// footer.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let header = TraceHeader {
            algorithm: self.algorithm.clone(),
            scenario_digest: self.scenario_digest,
            pdr: self.pdr,
            seed: self.seed,
        };
        out.push_str(&serde_json::to_string(&header).expect("serializable"));
        out.push('\n');
        for record in &self.records {
            out.push_str(&serde_json::to_string(record).expect("serializable"));
            out.push('\n');
        }
        let footer = TraceFooter {
            stop: self.stop,
            iterations: self.iterations,
            diverged_nodes: self.diverged_nodes.clone(),
        };
        out.push_str(&serde_json::to_string(&footer).expect("serializable"));
        out.push('\n');
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header_line = lines.next().ok_or_else(|| Error::TraceLog("empty log".into()))?;
        let header: TraceHeader = serde_json::from_str(header_line)
            .map_err(|e| Error::TraceLog(format!("bad header: {e}")))?;
        let mut records = Vec::new();
        let mut footer: Option<TraceFooter> = None;
        for line in lines {
            if let Ok(record) = serde_json::from_str::<IterationRecord>(line) {
                records.push(record);
            } else {
                footer = Some(
                    serde_json::from_str(line)
                        .map_err(|e| Error::TraceLog(format!("bad footer: {e}")))?,
                );
            }
        }
        let footer = footer.ok_or_else(|| Error::TraceLog("missing footer".into()))?;
        Ok(Self {
            algorithm: header.algorithm,
            scenario_digest: header.scenario_digest,
            pdr: header.pdr,
            seed: header.seed,
            records,
            stop: footer.stop,
            iterations: footer.iterations,
            diverged_nodes: footer.diverged_nodes,
        })
    }
}

// ---------------------------------------------------------------------------
// Run loop
// ---------------------------------------------------------------------------

/// Termination settings for a run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Termination {
    /// Convergence threshold on the largest estimate change (Hz).
    pub threshold: f64,
    /// Hard iteration cap.
    pub max_iterations: u64,
}

impl Default for Termination {
    fn default() -> Self {
        Self { threshold: 1e-6, max_iterations: 200 }
    }
}

fn snapshot(beliefs: &BeliefMap) -> BTreeMap<NodeId, Option<BeliefSnapshot>> {
    beliefs
        .iter()
        .map(|(&n, b)| {
            let snap = b
                .is_informative()
                .then(|| BeliefSnapshot { mean: b.mean, variance: b.variance() });
            (n, snap)
        })
        .collect()
}

/// Drives `engine` under the link model until the estimates settle, the
/// iteration cap is hit, or the divergence guard fires. Scripted events are
/// applied before their stated iteration; threshold termination is suspended
/// while events are still pending so every scripted change is exercised.
///
/// With delays in play, a round where nothing happens to arrive leaves every
/// estimate in place, so a single sub-threshold change proves nothing.
/// Threshold termination therefore requires the change to stay below the
/// threshold for `delay_bound + 1` consecutive iterations, which reduces to
/// the plain per-iteration check under instant delivery.
pub fn run<E: Engine>(
    engine: &mut E,
    scenario: &Scenario,
    link_model: &LinkModel,
    termination: &Termination,
    events: &[DynamicEvent],
) -> Result<RunTrace> {
    crate::scenario::validate_events(events)?;
    let mut current = scenario.clone();
    ensure_anchored(&current.topology)?;

    let digest = current.digest();
    let mut crlb_avg = oracle::crlb_average(&current.topology, &current.measurements)?;
    let mut divergence_bound = DIVERGENCE_FACTOR * current.measurements.max_abs().max(1.0);

    let mut in_flight: BTreeMap<u64, Vec<(DirectedLink, E::Payload)>> = BTreeMap::new();
    let mut records: Vec<IterationRecord> = Vec::new();
    let mut payloads_cumulative: u64 = 0;
    let mut next_event = 0usize;
    let mut stop = StopReason::IterationCap;
    let mut diverged_nodes: Vec<NodeId> = Vec::new();
    let mut iterations = 0;
    let mut calm_streak: u32 = 0;

    for l in 1..=termination.max_iterations {
        let mut topology_changed = false;
        while next_event < events.len() && events[next_event].at_iteration == l {
            current = current.apply_event(&events[next_event])?;
            ensure_anchored(&current.topology)?;
            engine.apply_scenario(&current)?;
            crlb_avg = oracle::crlb_average(&current.topology, &current.measurements)?;
            divergence_bound = DIVERGENCE_FACTOR * current.measurements.max_abs().max(1.0);
            // Dropping nodes can leave stale queued payloads behind.
            for queue in in_flight.values_mut() {
                queue.retain(|(link, _)| {
                    current.topology.contains_edge(Edge::new(link.from, link.to))
                });
            }
            topology_changed = true;
            next_event += 1;
        }

        let prev_beliefs = engine.beliefs().clone();
        let outgoing = engine.begin_iteration();
        debug_assert_eq!(engine.iteration(), l);

        let mut delivered = 0u32;
        let mut dropped = 0u32;
        let mut delayed = 0u32;
        if let Some(due) = in_flight.remove(&l) {
            for (link, payload) in due {
                engine.receive(link, payload);
            }
        }
        let report = draw_delivery(link_model, &current.topology, l);
        for (link, payload) in outgoing {
            match report.outcome(link)? {
                LinkOutcome::Dropped => dropped += 1,
                LinkOutcome::Delivered { delay: 0 } => {
                    engine.receive(link, payload);
                    delivered += 1;
                }
                LinkOutcome::Delivered { delay } => {
                    in_flight.entry(l + u64::from(delay)).or_default().push((link, payload));
                    delayed += 1;
                }
            }
        }
        engine.end_iteration();
        payloads_cumulative += engine.payloads_per_iteration() as u64;
        iterations = l;

        let anchor = current.topology.anchor();
        let max_delta = if topology_changed {
            None
        } else {
            max_estimate_delta(&prev_beliefs, engine.beliefs(), anchor)
        };

        diverged_nodes = engine
            .beliefs()
            .iter()
            .filter(|(&n, b)| n != anchor && b.is_informative() && b.mean.abs() > divergence_bound)
            .map(|(&n, _)| n)
            .collect();

        records.push(IterationRecord {
            iteration: l,
            n_nodes: current.topology.node_count() as u32,
            delivered,
            dropped,
            delayed,
            max_delta,
            payloads_cumulative,
            crlb_avg,
            beliefs: snapshot(engine.beliefs()),
            truth: current.truth.offsets().clone(),
        });

        if !diverged_nodes.is_empty() {
            stop = StopReason::Diverged;
            break;
        }
        let events_pending = next_event < events.len();
        calm_streak = match max_delta {
            Some(delta) if !events_pending && delta < termination.threshold => calm_streak + 1,
            _ => 0,
        };
        if calm_streak > link_model.delay_bound() {
            stop = StopReason::Threshold;
            break;
        }
    }

    Ok(RunTrace {
        algorithm: engine.algorithm_name().to_string(),
        scenario_digest: digest,
        pdr: link_model.pdr(),
        seed: link_model.seed,
        records,
        stop,
        iterations,
        diverged_nodes,
    })
}

fn ensure_anchored(topology: &Topology) -> Result<()> {
    let stranded = topology.unanchored_nodes();
    if stranded.is_empty() {
        Ok(())
    } else {
        Err(Error::AnchorDisconnected(stranded))
    }
}
