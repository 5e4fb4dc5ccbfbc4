//! File formats, experiment harness, command line and live service for
//! the `trfmm-core` planner.

pub mod artifact;
pub mod bridge;
pub mod cli;
pub mod harness;
pub mod io;
pub mod scenario;

pub use trfmm_core as core;
