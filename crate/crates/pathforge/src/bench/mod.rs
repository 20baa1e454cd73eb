//! Monte Carlo cross-validation benchmark protocol: fixed train/validation
//! plans, rank-based AUC, bootstrap confidence bands, parallel benchmark
//! runs, and checkpoint sweeps.

mod bootstrap;
mod metrics;
mod plan;
mod run;

pub use bootstrap::{bootstrap_mean_ci, CurveBand};
pub use metrics::auc;
pub use plan::{make_mccv_plan, make_mccv_plan_stratified, MCCVPlan, Split};
pub use run::{
    checkpoint_sweep, run_benchmark, write_report, write_sweep, BenchReport, RunRecord,
    SweepReport, SweepRow,
};
