//! Metrics, leave-one-subject-out orchestration and reporting.

pub mod experiment;
pub mod loso;
pub mod metrics;
pub mod report;

pub use experiment::{
    dense_name, member_name, run_experiment, ExperimentConfig, ExperimentKind, ExperimentReport, FoldAudit,
    ModelResult, SeedRecord, SubjectResult, ENSEMBLE_NAME,
};
pub use loso::{loso_split, Fold};
pub use metrics::{aggregate, metrics, Aggregate, ConfusionCounts, MetricKind, Metrics};
pub use report::{emit_plot_data, model_aggregate, plot_rows, read_report_json, render_table, write_report_files, write_report_json};
