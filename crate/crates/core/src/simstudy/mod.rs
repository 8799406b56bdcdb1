//! Simulation harness: data generating process, replication loop, metrics
//! and reports.

pub mod dgp;
pub mod grid;
pub mod metrics;
pub mod report;
pub mod run;

pub use dgp::{DgpParams, ReferenceSummary};
pub use grid::{GridFile, ScenarioGrid};
pub use metrics::{summarize, MetricsRow};
pub use report::ScenarioReport;
pub use run::{run_scenario, ScenarioConfig, ScenarioRun};
