//! Command-line frontend for the distributed offset-estimation simulator:
//! scenario generation, engine runs, canned experiments, and verification
//! suites over the `dopcomp` library.

pub mod build;
pub mod commands;
pub mod config;
pub mod output;
