//! Experiment driver for the `flowkv` command-line tool: scenario sweeps,
//! CSV reports, the long-prompt benchmark and the loss-model table.

pub mod bench;
pub mod config;
pub mod sweep;

use flowkv_core::loss::{decay_table, InfoLossModel, LossError};
use flowkv_core::strategy::SessionError;
use thiserror::Error;

pub use config::SweepConfig;
pub use sweep::{run_scenario, run_sweep, Cell, ScenarioReport, SweepReport, SweepRow};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("invalid scenario: {0}")]
    Scenario(String),
    #[error("{cell}: {source}")]
    Session {
        cell: String,
        #[source]
        source: SessionError,
    },
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::Loss(_) => exit::CONFIG,
            _ => 1,
        }
    }
}

pub mod exit {
    pub const OK: i32 = 0;
    pub const CONFIG: i32 = 2;
    pub const INVARIANT: i32 = 3;
    pub const PARTIAL: i32 = 4;
}

/// Exit status for a finished sweep: invariant breaks outrank failed cells.
pub fn sweep_exit_code(report: &SweepReport) -> i32 {
    if !report.violations.is_empty() {
        exit::INVARIANT
    } else if report.failures > 0 {
        exit::PARTIAL
    } else {
        exit::OK
    }
}

pub const LOSS_HEADER: &str = "# flowkv-loss v1";

pub fn loss_model_csv(model: &InfoLossModel, max_turns: u32) -> Result<String, HarnessError> {
    let rows = decay_table(model, max_turns)?;
    sweep::to_csv(LOSS_HEADER, &rows)
}
