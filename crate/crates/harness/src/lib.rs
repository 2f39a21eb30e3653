//! Experiment harness for the status-update laboratory: TOML-configured
//! sweeps and ablations over the simulator, agents, and baselines, with CSV
//! and manifest output.

use thiserror::Error;

pub mod config;
pub mod emit;
pub mod experiment;
pub mod stats;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("output: {0}")]
    Output(String),
    #[error(transparent)]
    Sim(#[from] tpaoi_core::sim::SimError),
    #[error(transparent)]
    Agent(#[from] tpaoi_core::agent::AgentError),
    #[error(transparent)]
    Baseline(#[from] tpaoi_core::baselines::BaselineError),
    #[error(transparent)]
    Net(#[from] tpaoi_core::qnet::NetError),
    #[error(transparent)]
    Metrics(#[from] tpaoi_core::metrics::MetricsError),
}
