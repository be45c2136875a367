//! ROC analysis and the rolling prediction experiment.

pub mod experiment;
pub mod roc;

pub use experiment::{
    ExperimentDiagnostics, CurveSummary,
    SnapshotContext,
    run_experiment, write_outcomes, write_roc, DayMode, ExperimentConfig, ExperimentResult, PredictionOutcome,
};
pub use roc::{auc, classify, mann_whitney, roc, RocCurve, Thresholds, DEFAULT_GRID};
