//! Mitigation: evict flagged rules, spare elephants, block repeat offenders.

use std::collections::BTreeMap;
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

use crate::flowtable::{EvictionCause, MatchKey, TableSnapshot};
use crate::netsim::Simulator;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlacklistEntry {
    pub eviction_count: u32,
    pub blocked: bool,
    pub first_seen: f64,
    pub last_seen: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Blacklist {
    pub block_after_evictions: u32,
    pub entries: BTreeMap<Ipv4Addr, BlacklistEntry>,
}

impl Blacklist {
    pub fn new(block_after_evictions: u32) -> Self {
        Self {
            block_after_evictions: block_after_evictions.max(1),
            entries: BTreeMap::new(),
        }
    }

    /// Counts one eviction against `ip`; true when this pushed it over the
    /// blocking threshold.
    pub fn record_eviction(&mut self, ip: Ipv4Addr, now: f64) -> bool {
        let e = self.entries.entry(ip).or_insert(BlacklistEntry {
            eviction_count: 0,
            blocked: false,
            first_seen: now,
            last_seen: now,
        });
        e.eviction_count += 1;
        e.last_seen = now;
        if !e.blocked && e.eviction_count >= self.block_after_evictions {
            e.blocked = true;
            return true;
        }
        false
    }

    pub fn is_blocked(&self, ip: Ipv4Addr) -> bool {
        self.entries.get(&ip).is_some_and(|e| e.blocked)
    }

    pub fn blocked(&self) -> impl Iterator<Item = Ipv4Addr> + '_ {
        self.entries
            .iter()
            .filter(|(_, e)| e.blocked)
            .map(|(ip, _)| *ip)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MitigationConfig {
    /// Percentile of byte counts in the window above which a rule may be
    /// an elephant.
    pub elephant_percentile: f64,
    pub block_after_evictions: u32,
}

impl Default for MitigationConfig {
    fn default() -> Self {
        Self {
            elephant_percentile: 95.0,
            block_after_evictions: 3,
        }
    }
}

/// Where evictions and blocks land.
pub trait Enforcer {
    /// Removes the rule; true if the monitored table held it.
    fn evict(&mut self, key: &MatchKey) -> bool;
    fn block(&mut self, ip: Ipv4Addr);
}

/// Enforces network-wide on a simulator, reporting for one switch.
pub struct SimEnforcer<'a> {
    pub sim: &'a mut Simulator,
    pub switch: usize,
}

impl Enforcer for SimEnforcer<'_> {
    fn evict(&mut self, key: &MatchKey) -> bool {
        let held = self.sim.table(self.switch).contains(key);
        self.sim.evict_everywhere(key, EvictionCause::Mitigation);
        held
    }

    fn block(&mut self, ip: Ipv4Addr) {
        self.sim.block_source(ip);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub flow_id: String,
    pub key: MatchKey,
    pub probability: f64,
    pub label: u8,
    pub psi: bool,
    pub byte_count: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct DetectionReport {
    pub time: f64,
    pub active: bool,
    pub verdicts: Vec<Verdict>,
    pub evicted: Vec<String>,
    pub protected: Vec<String>,
    pub newly_blocked: Vec<Ipv4Addr>,
    pub occupancy_before: usize,
    pub occupancy_after: usize,
}

/// Nearest-rank percentile.
pub fn percentile(values: &[u64], pct: f64) -> u64 {
    if values.is_empty() {
        return 0;
    }
    let mut v = values.to_vec();
    v.sort_unstable();
    let rank = ((pct / 100.0) * v.len() as f64).ceil() as usize;
    v[rank.clamp(1, v.len()) - 1]
}

pub fn mitigate(
    verdicts: Vec<Verdict>,
    snapshot: &TableSnapshot,
    blacklist: &mut Blacklist,
    cfg: &MitigationConfig,
    enforcer: &mut impl Enforcer,
) -> DetectionReport {
    let bytes: Vec<u64> = snapshot.rules().iter().map(|r| r.byte_count).collect();
    let elephant_bytes = percentile(&bytes, cfg.elephant_percentile);
    let mut report = DetectionReport {
        time: snapshot.time,
        active: true,
        occupancy_before: snapshot.len(),
        ..Default::default()
    };
    let mut removed = 0;
    for v in &verdicts {
        if v.label != 1 {
            continue;
        }
        if v.byte_count > elephant_bytes && !v.psi {
            report.protected.push(v.flow_id.clone());
            continue;
        }
        if enforcer.evict(&v.key) {
            removed += 1;
        }
        report.evicted.push(v.flow_id.clone());
        if blacklist.record_eviction(v.key.src_ip, snapshot.time) {
            enforcer.block(v.key.src_ip);
            report.newly_blocked.push(v.key.src_ip);
        }
    }
    report.occupancy_after = report.occupancy_before - removed;
    report.verdicts = verdicts;
    report
}
