//! Seeded lattice simulation of stochastic flows of kernels on oriented metric graphs.

pub mod noise;
pub mod graph;
pub mod sbmflow;
pub mod starflow;
pub mod graphflow;
pub mod stats;
pub mod verify;
pub mod cli;
