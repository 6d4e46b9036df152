//! Experiment designs, fold execution, metrics and run directories.

mod metrics;
mod plan;
mod results;
mod run;
mod rundir;

pub use metrics::{
    compute_metrics, confusion, per_patient_report, rank_auc, roc_curve, trapezoid_area, Confusion, MetricsReport,
    PatientAccuracy, PatientReport, RocPoint, HISTOGRAM_BINS,
};
pub use plan::{make_lopo_plan, make_plan, side, ExperimentId, ExperimentPlan, Fold, Side};
pub use results::{ResultRecord, ResultVector};
pub use run::{fold_seed, run_experiment, ExperimentConfig, ExperimentOutcome, FoldReport, FoldTraining};
pub use rundir::{OutputLock, RunDir, LOCK_FILE};
