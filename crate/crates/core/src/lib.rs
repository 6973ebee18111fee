//! Distributed estimation of per-vehicle frequency pre-compensation offsets.
//!
//! Vehicles share a carrier band and each pair within communication range
//! observes a noisy sum of the two endpoint offsets. This crate estimates the
//! per-vehicle offsets from those pairwise-sum measurements with two
//! message-passing engines, and stress-tests them under packet loss, random
//! delays, and nodes joining or leaving mid-run:
//!
//! - [`gbp`]: classical Gaussian belief propagation. Every node sends one
//!   distinct message per neighbor per iteration (`2|E|` payloads).
//! - [`lsbp`]: linear-scaling belief propagation. Every node broadcasts its
//!   current belief once per iteration (`N` payloads); receivers convert
//!   neighbor beliefs into messages locally. Its variance recursion and mean
//!   iteration admit the fixed-point analyses in [`lsbp`] and [`analysis`].
//!
//! The centralized maximum-likelihood estimator and Cramér–Rao lower bound
//! live in [`oracle`] and serve as the accuracy reference throughout the test
//! suite. [`scenario`] builds topologies, ground truths, and measurement
//! sets; [`netsim`] drives an engine over a lossy link model to termination.
//!
//! All randomness flows through explicitly keyed streams ([`seeds`]), so any
//! run is bit-reproducible from its configuration, with or without the
//! `parallel` feature.

pub mod analysis;
pub mod error;
pub mod exec;
pub mod gaussian;
pub mod gbp;
pub mod lsbp;
pub mod netsim;
pub mod oracle;
pub mod scenario;
pub mod seeds;
#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};

// The fixed-point analyses expose matrix and vector types; re-export the
// linear-algebra crate so downstream users name identical versions.
pub use nalgebra;

/// Vehicle index. Scenario generators number nodes from 1; the anchor is the
/// node whose offset is fixed by convention.
pub type NodeId = u32;
