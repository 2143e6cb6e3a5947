//! Metrics and the experiment protocols built on the attacks.

mod experiments;
mod metrics;

pub use experiments::{
    default_extraction_t_start, mia_score, run_extraction_experiment, run_iia_experiment, run_mia_experiment, sweep_csv,
    sweep_timesteps, AttackSettings, ExtractionQueryReport, ExtractionReport, ExtractionSettings,
    SweepRow,
};
pub use metrics::{
    auc_roc, classification_metrics, ClassificationMetrics, Confusion, LabeledScore, Metrics,
    MetricsReport, RunMetrics,
};
