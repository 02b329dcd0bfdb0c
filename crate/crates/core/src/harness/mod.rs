//! Scenario configuration, the closed-loop driver, metrics and export.

mod config;
mod log;
mod run;

pub use config::{
    derive_seed, preset_names, FailureInjection, FailureKind, FilterConfig, Guidance, LocalizerKind, MissionConfig,
    Rates, RunLimits, ScenarioConfig, ScheduledEvent,
};
pub use log::{
    compute_rmse, read_rows_csv, rmse_of_rows, summarize, write_rows_csv, LogRow, RunLog, RunSummary, Termination,
};
pub use run::{run_scenario, sweep};
