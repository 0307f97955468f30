//! Environments, the agent-environment episode loop and trace output.

pub mod env;
pub mod episode;
pub mod trace;

pub use env::{thermostat_agent, thermostat_env, Environment, ThermostatConfig};
pub use episode::{evaluate, run_episode, Agent, Evaluation};
pub use trace::{config_digest, read_csv, StepRecord, Trace, TraceRow, TRACE_COLUMNS};
