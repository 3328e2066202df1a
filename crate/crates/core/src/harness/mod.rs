//! Batch experiments over synthetic models: configuration, prompt corpora,
//! replication statistics and the three sweeps.

pub mod config;
pub mod corpus;
pub mod stats;
pub mod sweeps;

pub use config::{Experiment, ExperimentConfig, ModelSpec};
pub use corpus::{load_prompts, PromptRecord};
pub use stats::Estimate;
pub use sweeps::{
    run_margin_cdf, run_overcharge_sweep, run_profit_sweep, MarginReport, OverchargeReport,
    ProfitReport,
};
