//! The per-snapshot detection loop: analyze, screen, classify, mitigate.

use serde::{Deserialize, Serialize};

use super::analyzer::analyze_table;
use super::anomaly::{AnomalyError, CrsBins};
use super::boost::{predict_flow, BoostError, TrainedModel};
use super::features::{extract_features, FeatureContext, FeatureVector};
use super::mitigate::{
    mitigate, Blacklist, DetectionReport, MitigationConfig, SimEnforcer, Verdict,
};
use crate::flowtable::TableSnapshot;
use crate::netsim::Simulator;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorConfig {
    /// Fraction of capacity that activates the analyzer.
    pub occupancy_threshold: f64,
    /// Rules older than this many seconds are suspicious.
    pub duration_threshold: f64,
    /// PAF gate; defaults to the switch idle timeout.
    pub paf_gate: Option<f64>,
    /// CRS gate in percent.
    pub crs_gate: f64,
    pub mitigation: MitigationConfig,
    pub crs_bins: CrsBins,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            occupancy_threshold: 0.8,
            duration_threshold: 100.0,
            paf_gate: None,
            crs_gate: 50.0,
            mitigation: MitigationConfig::default(),
            crs_bins: CrsBins::default(),
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum DetectorError {
    #[error(transparent)]
    Anomaly(#[from] AnomalyError),
    #[error(transparent)]
    Boost(#[from] BoostError),
}

/// Screening gate: a rule goes to the classifier when it arrives faster than
/// the idle timeout, carries little distinctive content, or looks spoofed.
pub fn admit(v: &FeatureVector, paf_gate: f64, crs_gate: f64) -> bool {
    v.paf_s < paf_gate || v.crs_pct < crs_gate || v.psi
}

pub struct Detector {
    pub config: DetectorConfig,
    pub model: TrainedModel,
    pub blacklist: Blacklist,
    pub switch: usize,
    idle_timeout: f64,
}

impl Detector {
    pub fn new(
        config: DetectorConfig,
        model: TrainedModel,
        switch: usize,
        idle_timeout: f64,
    ) -> Self {
        Self {
            blacklist: Blacklist::new(config.mitigation.block_after_evictions),
            config,
            model,
            switch,
            idle_timeout,
        }
    }

    /// Runs one cycle on the snapshot of the monitored switch.
    pub fn on_snapshot(
        &mut self,
        sim: &mut Simulator,
        snapshot: &TableSnapshot,
    ) -> Result<DetectionReport, DetectorError> {
        let analysis = analyze_table(
            snapshot,
            self.config.occupancy_threshold,
            self.config.duration_threshold,
        );
        if !analysis.is_active() {
            return Ok(DetectionReport {
                time: snapshot.time,
                occupancy_before: snapshot.len(),
                occupancy_after: snapshot.len(),
                ..Default::default()
            });
        }
        let suspicious = analysis.suspicious();
        let vectors = {
            let ctx = FeatureContext {
                snapshot,
                arrivals: sim.arrivals(self.switch),
                prefix_map: sim.port_prefixes(self.switch),
                bins: self.config.crs_bins,
            };
            extract_features(&ctx, Some(suspicious))?
        };
        let paf_gate = self.config.paf_gate.unwrap_or(self.idle_timeout);
        let mut verdicts = Vec::new();
        for (&i, v) in suspicious.iter().zip(&vectors) {
            if !admit(v, paf_gate, self.config.crs_gate) {
                continue;
            }
            let (p, label) = predict_flow(&self.model, v)?;
            let r = &snapshot.rules()[i];
            verdicts.push(Verdict {
                flow_id: v.flow_id.clone(),
                key: r.key,
                probability: p,
                label,
                psi: v.psi,
                byte_count: r.byte_count,
            });
        }
        let mut enforcer = SimEnforcer {
            sim,
            switch: self.switch,
        };
        Ok(mitigate(
            verdicts,
            snapshot,
            &mut self.blacklist,
            &self.config.mitigation,
            &mut enforcer,
        ))
    }
}
