//! One end-to-end run: background plus attack traffic through the simulated
//! network, with optional per-second detection on the monitored switch.

use std::collections::{BTreeSet, HashMap};
use std::net::Ipv4Addr;

use serde::Serialize;

use super::config::ScenarioConfig;
use crate::flora::anomaly::AnomalyError;
use crate::flora::boost::{train_classifier, BoostError, TrainedModel};
use crate::flora::dataset::{Dataset, DatasetError};
use crate::flora::detector::{Detector, DetectorError};
use crate::flora::features::{extract_features, FeatureContext, FeatureVector};
use crate::flowtable::{EvictionCause, MatchKey, Origin, TableSnapshot};
use crate::netsim::{ConfigError, HostRole, SimCounters, SimError, Simulator};
use crate::traffic::{
    generate_attack, generate_background, plan_attack, read_trace_csv, AttackPlan, TrafficError,
};

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Topology(#[from] ConfigError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Traffic(#[from] TrafficError),
    #[error(transparent)]
    Detector(#[from] DetectorError),
    #[error(transparent)]
    Features(#[from] AnomalyError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Boost(#[from] BoostError),
    #[error("loading model {path}: {msg}")]
    Model { path: String, msg: String },
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("topology has no {0} hosts")]
    NoHosts(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OccupancyRow {
    pub time_s: f64,
    pub normal_rules: usize,
    pub attack_rules: usize,
    pub capacity: usize,
}

impl OccupancyRow {
    pub fn total(&self) -> usize {
        self.normal_rules + self.attack_rules
    }

    pub fn attack_share(&self) -> f64 {
        if self.capacity == 0 {
            0.0
        } else {
            self.attack_rules as f64 / self.capacity as f64
        }
    }
}

/// Per-cycle digest of a detection report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CycleSummary {
    pub time_s: f64,
    pub occupancy_before: usize,
    pub occupancy_after: usize,
    pub classified: usize,
    pub flagged: usize,
    pub evicted: usize,
    pub protected: usize,
    pub newly_blocked: Vec<Ipv4Addr>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScenarioResult {
    pub occupancy: Vec<OccupancyRow>,
    pub total_overflows: u64,
    pub first_overflow_s: Option<f64>,
    pub first_full_s: Option<f64>,
    /// Mean occupancy over all snapshots, percent of capacity.
    pub mean_utilization: f64,
    pub plan: Option<AttackPlan>,
    pub attack_start_s: Option<f64>,
    pub attack_sources: usize,
    /// Attack rules at the monitored switch removed by idle timeout while
    /// the attack was running.
    pub attack_idle_evictions: usize,
    pub first_detection_s: Option<f64>,
    pub overflows_after_detection: u64,
    pub cycles: Vec<CycleSummary>,
    pub blocked_sources: Vec<Ipv4Addr>,
    pub counters: SimCounters,
    #[serde(skip)]
    pub dataset: Option<Dataset>,
}

impl ScenarioResult {
    /// Largest attack share of capacity at or after `t`.
    pub fn max_attack_share_from(&self, t: f64) -> f64 {
        self.occupancy
            .iter()
            .filter(|r| r.time_s >= t)
            .map(OccupancyRow::attack_share)
            .fold(0.0, f64::max)
    }

    pub fn write_occupancy_csv<W: std::io::Write>(&self, w: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(w);
        w.write_record(["time_s", "normal_rules", "attack_rules", "capacity"])?;
        for r in &self.occupancy {
            w.write_record([
                format!("{}", r.time_s),
                r.normal_rules.to_string(),
                r.attack_rules.to_string(),
                r.capacity.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Collect one labelled row per distinct rule seen at the monitored
    /// switch, taken from the snapshot where the rule was oldest.
    pub collect_dataset: bool,
    /// Detector model; trained on a detector-off companion run if absent.
    pub model: Option<TrainedModel>,
}

pub(crate) fn sub_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

struct Collector {
    index: HashMap<MatchKey, usize>,
    rows: Vec<FeatureVector>,
}

impl Collector {
    fn observe(
        &mut self,
        sim: &Simulator,
        sw: usize,
        snap: &TableSnapshot,
        bins: crate::flora::CrsBins,
    ) -> Result<(), AnomalyError> {
        let ctx = FeatureContext {
            snapshot: snap,
            arrivals: sim.arrivals(sw),
            prefix_map: sim.port_prefixes(sw),
            bins,
        };
        let vs = extract_features(&ctx, None)?;
        for ((r, origin), mut v) in snap.rows().zip(vs) {
            v.label = Some(origin.label());
            match self.index.get(&r.key) {
                Some(&i) => {
                    if v.duration_s >= self.rows[i].duration_s {
                        self.rows[i] = v;
                    }
                }
                None => {
                    self.index.insert(r.key, self.rows.len());
                    self.rows.push(v);
                }
            }
        }
        Ok(())
    }
}

/// Trains the detector's model on a detector-off run of the same scenario
/// under a different seed.
pub fn train_detector_model(cfg: &ScenarioConfig) -> Result<TrainedModel, ScenarioError> {
    let mut companion = cfg.clone();
    companion.detector = None;
    companion.seed = cfg.seed.wrapping_add(cfg.training_seed_offset);
    let r = run_scenario(
        &companion,
        &RunOptions {
            collect_dataset: true,
            model: None,
        },
    )?;
    let data = r.dataset.expect("collected");
    Ok(train_classifier(&data, &cfg.classifier)?)
}

fn load_model(path: &std::path::Path) -> Result<TrainedModel, ScenarioError> {
    let err = |msg: String| ScenarioError::Model {
        path: path.display().to_string(),
        msg,
    };
    let s = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
    TrainedModel::from_json(&s).map_err(|e| err(e.to_string()))
}

pub fn run_scenario(
    cfg: &ScenarioConfig,
    opts: &RunOptions,
) -> Result<ScenarioResult, ScenarioError> {
    let mut sim = Simulator::new(cfg.topology.clone(), cfg.seed)?;
    let sw = sim
        .switch_index(&cfg.monitored_switch)
        .expect("validated when resolving");
    let idle = cfg.topology.switches[sw].idle_timeout;
    let legit = sim.endpoints(Some(HostRole::Legitimate));
    let attackers = sim.endpoints(Some(HostRole::Attacker));
    if legit.is_empty() {
        return Err(ScenarioError::NoHosts("legitimate"));
    }

    let background = match &cfg.trace_csv {
        Some(path) => {
            let f = std::fs::File::open(path)?;
            let (lo, hi) = cfg.background.payload.legit_alphabet;
            let entropy = (0.5 * f64::from(lo + hi)).log2();
            read_trace_csv(f, |n| sim.host_index(n), entropy)?
        }
        None => {
            generate_background(
                &cfg.background,
                &legit,
                sub_seed(cfg.seed, 1),
                0.0,
                cfg.run_length,
            )?
            .events
        }
    };
    sim.add_source(background);

    let mut plan = None;
    let mut attack_sources = 0;
    if let Some(a) = &cfg.attack {
        if attackers.is_empty() {
            return Err(ScenarioError::NoHosts("attacker"));
        }
        let p = plan_attack(
            cfg.capacity,
            &cfg.background,
            legit.len(),
            a.af_range,
            a.anp,
            idle,
        )?;
        let g = generate_attack(
            &p,
            &attackers,
            &legit,
            &cfg.background,
            &a.spoof,
            sub_seed(cfg.seed, 2),
            a.start,
            cfg.run_length,
        )?;
        attack_sources = g
            .flows
            .iter()
            .map(|f| f.key.src_ip)
            .collect::<BTreeSet<_>>()
            .len();
        sim.add_source(g.events);
        plan = Some(p);
    }

    let mut detector = match &cfg.detector {
        Some(d) => {
            let model = match (&opts.model, &cfg.model_path) {
                (Some(m), _) => m.clone(),
                (None, Some(p)) => load_model(p)?,
                (None, None) => train_detector_model(cfg)?,
            };
            Some(Detector::new(d.clone(), model, sw, idle))
        }
        None => None,
    };
    let bins = cfg
        .detector
        .as_ref()
        .map(|d| d.crs_bins)
        .unwrap_or_default();
    let mut collector = opts.collect_dataset.then(|| Collector {
        index: HashMap::new(),
        rows: Vec::new(),
    });

    let mut occupancy = Vec::with_capacity(cfg.run_length as usize);
    let mut first_overflow_s = None;
    let mut first_full_s = None;
    let mut first_detection_s = None;
    let mut overflows_at_detection = 0;
    let mut cycles = Vec::new();
    let mut blocked = Vec::new();
    let n_seconds = cfg.run_length as u64;
    for t in 1..=n_seconds {
        let out = sim.run_until(t as f64)?;
        for s in out.snapshots {
            let snap = &s.tables[sw];
            let row = OccupancyRow {
                time_s: s.time,
                normal_rules: snap.count_origin(Origin::Legitimate),
                attack_rules: snap.count_origin(Origin::Attack),
                capacity: snap.capacity,
            };
            if first_full_s.is_none() && row.total() >= row.capacity {
                first_full_s = Some(s.time);
            }
            if first_overflow_s.is_none() && sim.table(sw).total_overflows() > 0 {
                first_overflow_s = Some(s.time);
            }
            occupancy.push(row);
            if let Some(c) = collector.as_mut() {
                c.observe(&sim, sw, snap, bins)?;
            }
            if let Some(d) = detector.as_mut() {
                let rep = d.on_snapshot(&mut sim, snap)?;
                if rep.active {
                    if first_detection_s.is_none() {
                        first_detection_s = Some(s.time);
                        overflows_at_detection = sim.table(sw).total_overflows();
                    }
                    blocked.extend(rep.newly_blocked.iter().copied());
                    cycles.push(CycleSummary {
                        time_s: rep.time,
                        occupancy_before: rep.occupancy_before,
                        occupancy_after: rep.occupancy_after,
                        classified: rep.verdicts.len(),
                        flagged: rep.verdicts.iter().filter(|v| v.label == 1).count(),
                        evicted: rep.evicted.len(),
                        protected: rep.protected.len(),
                        newly_blocked: rep.newly_blocked,
                    });
                }
            }
        }
    }

    let table = sim.table(sw);
    let attack_start_s = cfg.attack.as_ref().map(|a| a.start);
    let attack_idle_evictions = match attack_start_s {
        Some(start) => table
            .eviction_log()
            .iter()
            .filter(|e| {
                e.origin == Origin::Attack
                    && e.cause == EvictionCause::IdleTimeout
                    && e.time >= start
                    && e.time <= cfg.run_length
            })
            .count(),
        None => 0,
    };
    let mean_utilization = if occupancy.is_empty() {
        0.0
    } else {
        100.0
            * occupancy
                .iter()
                .map(|r| r.total() as f64 / r.capacity.max(1) as f64)
                .sum::<f64>()
            / occupancy.len() as f64
    };
    let dataset = match collector {
        Some(c) => Some(Dataset::from_vectors(&c.rows)?),
        None => None,
    };
    Ok(ScenarioResult {
        occupancy,
        total_overflows: table.total_overflows(),
        first_overflow_s,
        first_full_s,
        mean_utilization,
        plan,
        attack_start_s,
        attack_sources,
        attack_idle_evictions,
        first_detection_s,
        overflows_after_detection: first_detection_s
            .map(|_| table.total_overflows() - overflows_at_detection)
            .unwrap_or(0),
        cycles,
        blocked_sources: blocked,
        counters: sim.counters(),
        dataset,
    })
}
