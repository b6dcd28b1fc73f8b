//! Simulation, synchronization, localization and trajectory refinement for a
//! grid-shaped sensor floor.

pub mod error;
pub mod grid;
pub mod par;
pub mod sim;

pub use error::{Error, Result};
pub use grid::{GridSpec, GroundTruthSample, Measurement, NodeId};
pub use par::Exec;
pub mod fsio;
pub mod ingest;
pub mod features;
pub mod nn;
pub mod forest;
pub mod eval;
pub mod trajfit;
pub mod config;
pub mod pipeline;
pub mod cli;
