//! Flow-table overflow simulation, reconnaissance and the FloRa defence.

pub mod addr;
pub mod flora;
pub mod flowtable;
pub mod harness;
pub mod netsim;
pub mod recon;
pub mod traffic;

pub use addr::Ipv4Prefix;
pub use flora::{
    BoostConfig, Dataset, DetectionReport, DetectorConfig, FeatureVector, Metrics, TrainedModel,
};
pub use flowtable::{
    EvictionCause, FieldSet, FlowRule, FlowTable, FlowTableError, InstallOutcome, MatchField,
    MatchKey, MatchResult, Origin, Protocol, RuleStats, TableSnapshot,
};
pub use harness::{ExperimentConfig, ScenarioConfig, ScenarioResult};
pub use netsim::{Delivery, HostRole, PacketEvent, RttSample, SimError, Simulator, TopologyConfig};
pub use recon::{ProbeResult, ReconReport, TimeoutEstimate};
pub use traffic::{AttackPlan, BackgroundProfile};
