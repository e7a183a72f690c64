//! Experiment orchestration: online runs with scheduled refits, threshold
//! sweeps, metrics, theory tables and result files.

mod experiment;
mod metrics;
mod results;
mod session;
mod theory_report;

pub use experiment::{
    explore_exploit_report, mean_queries_between, run_experiment, run_seed, sweep, ExampleRow, ExperimentConfig,
    ExperimentResult, PolicyKind, Summary, SweepResult, SweepRow, SweepSummaryRow, DEFAULT_THRESHOLDS,
};
pub use metrics::{ece, first_last_50};
pub use results::{format_sweep_table, read_result, write_result, write_sweep, RESULTS_FORMAT, SWEEP_FORMAT};
pub use session::OnlineSession;
pub use theory_report::{empirical_consensus_size, theory_report, TheoryFamily, TheoryRow};
