//! Experiment orchestration: configuration, scenario runs, the four-set
//! dataset, split evaluation and artifact export.

pub mod config;
pub mod experiment;
pub mod scenario;

pub use config::{ConfigFileError, ExperimentConfig, Scale, ScenarioConfig};
pub use experiment::{
    build_dataset, evaluate_splits, export_artifacts, run_recon_scenario, Artifacts, DatasetBuild,
    HarnessError, Manifest, SplitEvaluation, SplitOutcome, MANIFEST_FILE_NAME, SPLITS,
};
pub use scenario::{
    run_scenario, train_detector_model, OccupancyRow, RunOptions, ScenarioError, ScenarioResult,
};
