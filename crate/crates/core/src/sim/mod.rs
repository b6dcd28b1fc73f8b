//! Synthetic floor recordings: trajectory plans, the signal model and the
//! event-driven polling simulator.

pub mod engine;
pub mod log;
pub mod plan;
pub mod signal;

pub use engine::{simulate, simulate_with, EventLog, PayloadRecord, RunLog, SimConfig};
pub use log::{read_ground_truth_log, write_ground_truth_log, write_payload_log};
pub use plan::{plan_random_run, plan_training_runs, robot_position, TrajectoryPlan};
pub use signal::{sense, SignalModel};
