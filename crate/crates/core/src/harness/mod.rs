//! Metrics, experiment runner, report emission and the command line.

pub mod cli;
mod config;
mod experiment;
mod metrics;
mod report;

pub use config::{ExperimentConfig, DATASET_ENV, SYNTHETIC};
pub use experiment::{
    load_raw, prepare_data, run_experiment, run_stages, train_ensemble, Bb1Point, Experiment,
    Gb1Grid, GeneratorRun, ModelScore, PreparedData, ReportBundle, StageStatus,
};
pub use metrics::{accuracy, asr, classification_report, f1, far, ConfusionCounts, MetricReport};
pub use report::{emit_reports, REPORT_FILES};
