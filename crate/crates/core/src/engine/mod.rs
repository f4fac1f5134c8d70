//! Discrete-event engine, reports and the trace-replay metric study.

mod config;
mod replay;
mod report;
mod sim;

pub use config::{
    default_hysteresis, Pattern, ScenarioConfig, TopologySource, TrafficConfig,
    DEFAULT_MAX_LINK_ETX,
};
pub use replay::{replay_metric_study, replay_metric_study_with, MetricStudy, ReplayParams};
pub use report::{
    analyze_runs, emit_report, rule_of_three, Aggregate, ControlStats, Distribution, HopOutcome,
    HopRecord, PacketJourney, ReportFormat, RunReport, Terminal,
};
pub use sim::{run, run_with_topology};

use thiserror::Error;

use crate::topology::{TopologyError, TraceError};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("config line {line}: {msg}")]
    Config { line: usize, msg: String },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
