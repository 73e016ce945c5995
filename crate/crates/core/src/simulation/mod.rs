//! Benchmark scenarios and the replication grid.

mod grid;
mod metrics;
mod scenario;

pub use grid::{coverage, coverage_rate, replication_seed, run_grid, DetectionRecord, GridResult, GridSpec, RawEstimate};
pub use metrics::{write_detections_csv, write_raw_csv, ChangePointSummary, MetricsRow, MetricsTable};
pub use scenario::{generate_scenario, Exogenous, ScenarioKind, ScenarioSpec, ScenarioTruth, DESIGN_NAMES, TRUTH_NAMES};
