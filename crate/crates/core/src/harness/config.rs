//! Experiment configuration file (TOML) and its resolution into a runnable
//! scenario.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::addr::Ipv4Prefix;
use crate::flora::anomaly::CrsBins;
use crate::flora::boost::BoostConfig;
use crate::flora::detector::DetectorConfig;
use crate::flora::mitigate::MitigationConfig;
use crate::flowtable::FieldSet;
use crate::netsim::TopologyConfig;
use crate::traffic::{
    BackgroundProfile, PayloadModel, SpoofConfig, ATTACK_SETTINGS, BACKGROUND_SETTINGS,
};

#[derive(Debug, thiserror::Error)]
pub enum ConfigFileError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("parsing config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Time scaling between the desk profile and the full-length experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scale {
    Desk,
    Paper,
}

impl Scale {
    pub fn run_length(self) -> f64 {
        match self {
            Scale::Desk => 200.0,
            Scale::Paper => 1000.0,
        }
    }

    pub fn attack_start(self) -> f64 {
        match self {
            Scale::Desk => 60.0,
            Scale::Paper => 300.0,
        }
    }

    /// Multiplier on ANP so the attack fills the table on the shortened
    /// horizon.
    pub fn anp_scale(self) -> f64 {
        match self {
            Scale::Desk => 5.0,
            Scale::Paper => 1.0,
        }
    }

    pub fn duration_threshold(self) -> f64 {
        match self {
            Scale::Desk => 20.0,
            Scale::Paper => 100.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TopologySection {
    /// Flow table capacity; defaults to the background setting's capacity.
    pub capacity: Option<usize>,
    pub idle_timeout: f64,
    pub match_fields: FieldSet,
    pub controller_penalty_ms: f64,
    pub jitter_fraction: f64,
    pub host_link_latency_ms: f64,
    pub switch_link_latency_ms: f64,
    pub host_link_bandwidth_gbps: f64,
    pub switch_link_bandwidth_gbps: f64,
    /// Switch whose table is reported and defended.
    pub monitored_switch: String,
    /// Replaces the default tree entirely when given.
    pub custom: Option<TopologyConfig>,
}

impl Default for TopologySection {
    fn default() -> Self {
        Self {
            capacity: None,
            idle_timeout: 20.0,
            match_fields: FieldSet::five_tuple(),
            controller_penalty_ms: 50.0,
            jitter_fraction: 0.05,
            host_link_latency_ms: 1.0,
            switch_link_latency_ms: 2.0,
            host_link_bandwidth_gbps: 5.0,
            switch_link_bandwidth_gbps: 1.0,
            monitored_switch: "s1".into(),
            custom: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackgroundSection {
    /// Row of the background settings table, 1..=4.
    pub setting: usize,
    pub transmission_rate_pps: Option<f64>,
    pub packets_per_flow: f64,
    pub mean_flow_lifetime: f64,
    pub long_lived_fraction: f64,
    pub long_lived_lifetime: f64,
    pub packet_size_min: u32,
    pub packet_size_max: u32,
    pub per_flow_rate_mean: Option<f64>,
    pub per_flow_rate_cv: f64,
    pub gap_cv: f64,
    pub payload: PayloadModel,
    /// Replay this trace instead of synthesising background traffic.
    pub trace_csv: Option<PathBuf>,
}

impl Default for BackgroundSection {
    fn default() -> Self {
        let p = BackgroundProfile::default();
        Self {
            setting: 1,
            transmission_rate_pps: None,
            packets_per_flow: p.packets_per_flow,
            mean_flow_lifetime: p.mean_flow_lifetime,
            long_lived_fraction: p.long_lived_fraction,
            long_lived_lifetime: p.long_lived_lifetime,
            packet_size_min: p.packet_size_range.0,
            packet_size_max: p.packet_size_range.1,
            per_flow_rate_mean: p.per_flow_rate_mean,
            per_flow_rate_cv: p.per_flow_rate_cv,
            gap_cv: p.gap_cv,
            payload: p.payload,
            trace_csv: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackSection {
    pub enabled: bool,
    /// Row of the attack settings table, 1..=4.
    pub setting: usize,
    pub af_min: Option<f64>,
    pub af_max: Option<f64>,
    pub anp: Option<u32>,
    pub anp_scale: Option<f64>,
    pub start_s: Option<f64>,
    pub spoofed_fraction: f64,
    pub spoof_pool_size: usize,
    pub spoof_prefix: Ipv4Prefix,
}

impl Default for AttackSection {
    fn default() -> Self {
        let s = SpoofConfig::default();
        Self {
            enabled: true,
            setting: 1,
            af_min: None,
            af_max: None,
            anp: None,
            anp_scale: None,
            start_s: None,
            spoofed_fraction: s.spoofed_fraction,
            spoof_pool_size: s.pool_size,
            spoof_prefix: s.prefix,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorSection {
    pub enabled: bool,
    pub occupancy_threshold: f64,
    pub duration_threshold: Option<f64>,
    pub paf_gate: Option<f64>,
    pub crs_gate: f64,
    pub elephant_percentile: f64,
    pub block_after_evictions: u32,
    pub crs_bins: CrsBins,
    /// Pre-trained model; otherwise one is trained on a detector-off run.
    pub model: Option<PathBuf>,
    /// Seed offset of the detector-off run used for training.
    pub training_seed_offset: u64,
}

impl Default for DetectorSection {
    fn default() -> Self {
        let d = DetectorConfig::default();
        Self {
            enabled: false,
            occupancy_threshold: d.occupancy_threshold,
            duration_threshold: None,
            paf_gate: d.paf_gate,
            crs_gate: d.crs_gate,
            elephant_percentile: d.mitigation.elephant_percentile,
            block_after_evictions: d.mitigation.block_after_evictions,
            crs_bins: d.crs_bins,
            model: None,
            training_seed_offset: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierSection {
    pub tree_count: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub l2_leaf_reg: f64,
    pub seed: u64,
    pub subsample: f64,
    pub border_count: usize,
    pub ordered: bool,
    pub split_seed: u64,
    pub rfecv: bool,
    pub rfecv_folds: usize,
    pub rfecv_step: usize,
}

impl Default for ClassifierSection {
    fn default() -> Self {
        let b = BoostConfig::default();
        Self {
            tree_count: b.tree_count,
            max_depth: b.max_depth,
            learning_rate: b.learning_rate,
            l2_leaf_reg: b.l2_leaf_reg,
            seed: b.seed,
            subsample: b.subsample,
            border_count: b.border_count,
            ordered: b.ordered,
            split_seed: 7,
            rfecv: false,
            rfecv_folds: 5,
            rfecv_step: 1,
        }
    }
}

impl ClassifierSection {
    pub fn boost(&self) -> BoostConfig {
        BoostConfig {
            tree_count: self.tree_count,
            max_depth: self.max_depth,
            learning_rate: self.learning_rate,
            l2_leaf_reg: self.l2_leaf_reg,
            seed: self.seed,
            subsample: self.subsample,
            border_count: self.border_count,
            ordered: self.ordered,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub paper_scale: bool,
    pub run_length_s: Option<f64>,
    pub topology: TopologySection,
    pub background: BackgroundSection,
    pub attack: AttackSection,
    pub detector: DetectorSection,
    pub classifier: ClassifierSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            paper_scale: false,
            run_length_s: None,
            topology: TopologySection::default(),
            background: BackgroundSection::default(),
            attack: AttackSection::default(),
            detector: DetectorSection::default(),
            classifier: ClassifierSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttackScenario {
    pub setting: usize,
    pub af_range: (f64, f64),
    pub anp: u32,
    pub start: f64,
    pub spoof: SpoofConfig,
}

/// A fully resolved, validated scenario.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub scale: Scale,
    pub run_length: f64,
    pub capacity: usize,
    pub background_setting: usize,
    pub topology: TopologyConfig,
    pub monitored_switch: String,
    pub background: BackgroundProfile,
    pub trace_csv: Option<PathBuf>,
    pub attack: Option<AttackScenario>,
    pub detector: Option<DetectorConfig>,
    pub model_path: Option<PathBuf>,
    pub training_seed_offset: u64,
    pub classifier: BoostConfig,
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, ConfigFileError> {
        Ok(toml::from_str(s)?)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigFileError> {
        let s = std::fs::read_to_string(path).map_err(|source| ConfigFileError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&s)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialises")
    }

    pub fn scale(&self) -> Scale {
        if self.paper_scale {
            Scale::Paper
        } else {
            Scale::Desk
        }
    }

    /// The same experiment with both settings switched to row `set`.
    pub fn with_set(&self, set: usize) -> Self {
        let mut c = self.clone();
        c.background.setting = set;
        c.attack.setting = set;
        c.topology.capacity = None;
        c
    }

    pub fn resolve(&self) -> Result<ScenarioConfig, ConfigFileError> {
        let bad = |m: String| Err(ConfigFileError::Invalid(m));
        let scale = self.scale();
        let bs = self.background.setting;
        if !(1..=4).contains(&bs) {
            return bad(format!("background.setting must be 1..=4, got {bs}"));
        }
        let as_ = self.attack.setting;
        if !(1..=4).contains(&as_) {
            return bad(format!("attack.setting must be 1..=4, got {as_}"));
        }
        let run_length = self.run_length_s.unwrap_or(scale.run_length());
        if !(run_length > 0.0) || run_length.fract() != 0.0 {
            return bad(format!(
                "run_length_s must be a positive whole number, got {run_length}"
            ));
        }
        let (default_cap, default_pps) = BACKGROUND_SETTINGS[bs - 1];
        let capacity = self.topology.capacity.unwrap_or(default_cap);

        let t = &self.topology;
        let mut topology = match &t.custom {
            Some(c) => c.clone(),
            None => {
                let mut c = TopologyConfig::paper_default(capacity);
                c.host_link_latency_ms = t.host_link_latency_ms;
                c.host_link_bandwidth_gbps = t.host_link_bandwidth_gbps;
                for l in &mut c.links {
                    l.latency_ms = t.switch_link_latency_ms;
                    l.bandwidth_gbps = t.switch_link_bandwidth_gbps;
                }
                c.controller.penalty_ms = t.controller_penalty_ms;
                c.controller.jitter_fraction = t.jitter_fraction;
                c.set_match_fields(t.match_fields);
                c
            }
        };
        if t.custom.is_none() || self.topology.capacity.is_some() {
            topology.set_capacity(capacity);
        }
        topology.set_idle_timeout(t.idle_timeout);
        if !topology
            .switches
            .iter()
            .any(|s| s.name == t.monitored_switch)
        {
            return bad(format!(
                "monitored switch `{}` not in topology",
                t.monitored_switch
            ));
        }

        let b = &self.background;
        let background = BackgroundProfile {
            transmission_rate_pps: b.transmission_rate_pps.unwrap_or(default_pps),
            packets_per_flow: b.packets_per_flow,
            mean_flow_lifetime: b.mean_flow_lifetime,
            long_lived_fraction: b.long_lived_fraction,
            long_lived_lifetime: b.long_lived_lifetime,
            packet_size_range: (b.packet_size_min, b.packet_size_max),
            per_flow_rate_mean: b.per_flow_rate_mean,
            per_flow_rate_cv: b.per_flow_rate_cv,
            gap_cv: b.gap_cv,
            payload: b.payload.clone(),
        };
        background
            .validate()
            .map_err(|e| ConfigFileError::Invalid(e.to_string()))?;

        let a = &self.attack;
        let attack = if a.enabled {
            let ((lo, hi), anp) = ATTACK_SETTINGS[as_ - 1];
            let af_range = (a.af_min.unwrap_or(lo), a.af_max.unwrap_or(hi));
            let anp_scale = a.anp_scale.unwrap_or(scale.anp_scale());
            let anp = a
                .anp
                .unwrap_or_else(|| (f64::from(anp) * anp_scale).round() as u32);
            let start = a.start_s.unwrap_or(scale.attack_start());
            if !(start >= 0.0) || start >= run_length {
                return bad(format!(
                    "attack start {start} s must lie in [0, run length {run_length} s)"
                ));
            }
            if !(0.0..=1.0).contains(&a.spoofed_fraction) {
                return bad("attack.spoofed_fraction must lie in [0, 1]".into());
            }
            Some(AttackScenario {
                setting: as_,
                af_range,
                anp,
                start,
                spoof: SpoofConfig {
                    spoofed_fraction: a.spoofed_fraction,
                    pool_size: a.spoof_pool_size,
                    prefix: a.spoof_prefix,
                },
            })
        } else {
            None
        };

        let d = &self.detector;
        if !(0.0..=1.0).contains(&d.occupancy_threshold) {
            return bad("detector.occupancy_threshold is a fraction in [0, 1]".into());
        }
        let detector = d.enabled.then(|| DetectorConfig {
            occupancy_threshold: d.occupancy_threshold,
            duration_threshold: d.duration_threshold.unwrap_or(scale.duration_threshold()),
            paf_gate: d.paf_gate,
            crs_gate: d.crs_gate,
            mitigation: MitigationConfig {
                elephant_percentile: d.elephant_percentile,
                block_after_evictions: d.block_after_evictions,
            },
            crs_bins: d.crs_bins,
        });

        Ok(ScenarioConfig {
            seed: self.seed,
            scale,
            run_length,
            capacity,
            background_setting: bs,
            topology,
            monitored_switch: t.monitored_switch.clone(),
            background,
            trace_csv: b.trace_csv.clone(),
            attack,
            detector,
            model_path: d.model.clone(),
            training_seed_offset: d.training_seed_offset,
            classifier: self.classifier.boost(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_the_desk_profile() {
        let c = ExperimentConfig::from_toml_str("")
            .unwrap()
            .resolve()
            .unwrap();
        assert_eq!(c.run_length, 200.0);
        assert_eq!(c.capacity, 1500);
        let a = c.attack.unwrap();
        assert_eq!((a.start, a.anp), (60.0, 100));
        assert!(c.detector.is_none());
    }

    #[test]
    fn paper_scale_restores_full_length() {
        let c = ExperimentConfig::from_toml_str("paper_scale = true\n[detector]\nenabled = true")
            .unwrap()
            .resolve()
            .unwrap();
        assert_eq!(c.run_length, 1000.0);
        assert_eq!(c.attack.as_ref().unwrap().anp, 20);
        assert_eq!(c.attack.unwrap().start, 300.0);
        assert_eq!(c.detector.unwrap().duration_threshold, 100.0);
    }

    #[test]
    fn sections_parse() {
        let src = r#"
seed = 9
[topology]
idle_timeout = 10.0
match_fields = ["src_ip", "dst_ip"]
[background]
setting = 3
[attack]
setting = 2
start_s = 30.0
[detector]
enabled = true
crs_gate = 40.0
[classifier]
tree_count = 50
"#;
        let c = ExperimentConfig::from_toml_str(src)
            .unwrap()
            .resolve()
            .unwrap();
        assert_eq!(c.capacity, 2500);
        assert_eq!(c.background.transmission_rate_pps, 400.0);
        assert_eq!(c.topology.switches[0].idle_timeout, 10.0);
        assert_eq!(c.topology.switches[0].match_fields.len(), 2);
        assert_eq!(c.attack.unwrap().af_range, (8.0, 12.0));
        assert_eq!(c.detector.unwrap().crs_gate, 40.0);
        assert_eq!(c.classifier.tree_count, 50);
    }

    #[test]
    fn invalid_values_are_rejected() {
        for src in [
            "[background]\nsetting = 5",
            "run_length_s = 50.0\n[attack]\nstart_s = 60.0",
            "[topology]\nmonitored_switch = \"s9\"",
            "[topology]\nbogus = 1",
        ] {
            let parsed = ExperimentConfig::from_toml_str(src);
            assert!(
                parsed.is_err() || parsed.unwrap().resolve().is_err(),
                "{src}"
            );
        }
    }

    #[test]
    fn toml_roundtrip() {
        let c = ExperimentConfig::default();
        let back = ExperimentConfig::from_toml_str(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }
}
