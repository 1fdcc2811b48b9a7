//! Experiment runner: configuration, the training loop, output files,
//! ablations and sweeps.

pub mod config;
pub mod experiments;
pub mod output;
pub mod train;

pub use config::{DataSource, ExperimentConfig, LrSchedule, OutputConfig, TrainConfig};
pub use experiments::{
    ablate, evaluate, mean_std, run, run_with_dataset, sweep, sweep_point_config, AblationRow, SweepParam,
    SweepPoint, Variant,
};
pub use train::{accuracy, train_run, EpochMetrics, RunHooks, RunResult, StepRecord};
