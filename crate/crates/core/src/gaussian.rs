//! Information-form Gaussian primitives shared by both engines.
//!
//! Messages and beliefs are carried as `(precision, precision * mean)` pairs.
//! Zero precision encodes the uninformative element exactly, and the anchor's
//! pinned value is infinite precision, so neither end of the range needs a
//! special case in the update formulas.

use crate::NodeId;
use std::collections::BTreeMap;

/// Directed communication link `from -> to`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DirectedLink {
    pub from: NodeId,
    pub to: NodeId,
}

impl DirectedLink {
    pub fn new(from: NodeId, to: NodeId) -> Self {
        Self { from, to }
    }
}

/// A directed edge message: Gaussian over the receiver's offset.
///
/// `weighted_mean` stores precision times the message mean, so the
/// uninformative message is exactly `(0, 0)`. `stamp` is the iteration the
/// message was computed in; buffers only ever move it forward.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianMessage {
    pub precision: f64,
    pub weighted_mean: f64,
    pub stamp: u64,
}

impl GaussianMessage {
    pub fn new(precision: f64, mean: f64, stamp: u64) -> Self {
        debug_assert!(precision >= 0.0 && precision.is_finite());
        if precision > 0.0 {
            Self { precision, weighted_mean: precision * mean, stamp }
        } else {
            Self::uninformative(stamp)
        }
    }

    pub const fn uninformative(stamp: u64) -> Self {
        Self { precision: 0.0, weighted_mean: 0.0, stamp }
    }

    pub fn is_informative(&self) -> bool {
        self.precision > 0.0
    }

    /// Message mean, if the message carries any information.
    pub fn mean(&self) -> Option<f64> {
        self.is_informative().then(|| self.weighted_mean / self.precision)
    }
}

/// A node's Gaussian posterior approximation of its own offset.
///
/// Precision 0 means "no information yet" (infinite variance); infinite
/// precision pins the anchor at its reference value with zero variance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Belief {
    pub mean: f64,
    pub precision: f64,
}

impl Belief {
    pub const UNINFORMATIVE: Belief = Belief { mean: 0.0, precision: 0.0 };

    /// The anchor's belief: zero variance at the reference value.
    pub fn pinned(value: f64) -> Self {
        Belief { mean: value, precision: f64::INFINITY }
    }

    pub fn from_moments(mean: f64, variance: f64) -> Self {
        debug_assert!(variance >= 0.0);
        Belief { mean, precision: 1.0 / variance }
    }

    pub fn variance(&self) -> f64 {
        1.0 / self.precision
    }

    pub fn is_informative(&self) -> bool {
        self.precision > 0.0
    }

    /// Point estimate (the belief mean), if informative.
    pub fn estimate(&self) -> Option<f64> {
        self.is_informative().then_some(self.mean)
    }
}

/// Belief payload broadcast by the linear-scaling engine. Variance 0 is the
/// anchor; infinite variance is the uninformative initial belief.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BroadcastBelief {
    pub mean: f64,
    pub variance: f64,
    pub stamp: u64,
}

impl BroadcastBelief {
    pub fn from_belief(b: &Belief, stamp: u64) -> Self {
        Self { mean: b.mean, variance: b.variance(), stamp }
    }

    pub fn is_informative(&self) -> bool {
        self.variance.is_finite()
    }
}

pub type BeliefMap = BTreeMap<NodeId, Belief>;

/// Largest change of the point estimate between two consecutive belief maps,
/// over non-anchor nodes.
///
/// Returns `None` when the node sets differ (a topology change happened in
/// between) or when some non-anchor node still lacks an informative belief;
/// convergence cannot be declared in either case.
pub fn max_estimate_delta(prev: &BeliefMap, curr: &BeliefMap, anchor: NodeId) -> Option<f64> {
    if prev.len() != curr.len() {
        return None;
    }
    let mut worst: f64 = 0.0;
    for (node, belief) in curr {
        if *node == anchor {
            continue;
        }
        let old = prev.get(node)?;
        let delta = (belief.estimate()? - old.estimate()?).abs();
        worst = worst.max(delta);
    }
    Some(worst)
}

/// True when every non-anchor estimate moved by less than `threshold` and all
/// nodes hold informative beliefs.
pub fn has_converged(prev: &BeliefMap, curr: &BeliefMap, anchor: NodeId, threshold: f64) -> bool {
    matches!(max_estimate_delta(prev, curr, anchor), Some(d) if d < threshold)
}
