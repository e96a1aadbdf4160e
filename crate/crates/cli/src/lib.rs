pub mod ablation;
pub mod config;
pub mod experiment;

pub use ablation::{run_ablation, AblationRow, AblationTable, Axis};
pub use config::{DataConfig, EvalConfig, RunConfig};
pub use experiment::{evaluate, read_reports, run_experiment, run_experiment_on, Datasets, Metrics, RunReport, SeedRow, Summary};
