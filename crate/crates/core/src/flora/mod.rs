//! FloRa: flow analyzer, anomaly predictor, feature selection, boosted-tree
//! detection and mitigation.

pub mod analyzer;
pub mod anomaly;
pub mod boost;
pub mod dataset;
pub mod detector;
pub mod features;
pub mod metrics;
pub mod mitigate;
pub mod rfecv;

pub use analyzer::{analyze_table, Analysis};
pub use anomaly::{
    check_spoofed, compute_paf, entropy_of_counts, information_gain, shannon_entropy, CrsBins,
    CrsScorer,
};
pub use boost::{predict_flow, train_classifier, BoostConfig, TrainedModel};
pub use dataset::Dataset;
pub use detector::{Detector, DetectorConfig};
pub use features::{extract_features, FeatureContext, FeatureVector, FEATURE_NAMES};
pub use metrics::{Confusion, Metrics};
pub use mitigate::{mitigate, Blacklist, DetectionReport, MitigationConfig};
pub use rfecv::{rfecv_select, RfecvResult};
