//! Seeded multi-run campaigns over allocation strategies, the metrics that
//! compare them, and table / plot-data output.

mod campaign;
mod config;
mod emit;
mod metrics;

pub use campaign::{
    gp_extrapolated_laws, pool_hash, run_campaign, run_seed, Cell, ExperimentReport, Outcome, RunRecord,
    StrategySummary,
};
pub use config::{Dataset, ExperimentConfig, Strategy, DEFAULT_RUNS, PETA};
pub use emit::{emit, table_string, write_table, EmitFormat, PlotData, LAW_SAMPLES, TABLE_COLUMNS};
pub use metrics::{
    cost_saving, mean_std, regret, relative_improvement, relative_stats, CostSaving, Pair, RelativeStats, EQUAL_TOL,
    REGRET_TOL,
};
