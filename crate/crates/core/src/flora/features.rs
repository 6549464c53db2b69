//! Per-rule feature vectors built from one table snapshot.

use std::collections::HashMap;
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

use super::anomaly::{check_spoofed, compute_paf, AnomalyError, CrsBins, CrsScorer, PacketAttrs};
use crate::addr::Ipv4Prefix;
use crate::flowtable::{flow_id, MatchKey, TableSnapshot};
use crate::netsim::Arrival;

pub const FEATURE_COUNT: usize = 12;

pub const FEATURE_NAMES: [&str; FEATURE_COUNT] = [
    "duration_s",
    "pkt_count",
    "byte_count",
    "mean_dur_src",
    "mean_pkt_src",
    "mean_byte_src",
    "cv_dur_src",
    "cv_pkt_src",
    "cv_byte_src",
    "paf_s",
    "crs_pct",
    "psi",
];

pub const DATASET_CSV_HEADER: [&str; FEATURE_COUNT + 3] = [
    "flow_id",
    "src_ip",
    "duration_s",
    "pkt_count",
    "byte_count",
    "mean_dur_src",
    "mean_pkt_src",
    "mean_byte_src",
    "cv_dur_src",
    "cv_pkt_src",
    "cv_byte_src",
    "paf_s",
    "crs_pct",
    "psi",
    "label",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub flow_id: String,
    pub src_ip: Ipv4Addr,
    pub duration_s: f64,
    pub pkt_count: f64,
    pub byte_count: f64,
    pub mean_dur_src: f64,
    pub mean_pkt_src: f64,
    pub mean_byte_src: f64,
    pub cv_dur_src: f64,
    pub cv_pkt_src: f64,
    pub cv_byte_src: f64,
    pub paf_s: f64,
    pub crs_pct: f64,
    pub psi: bool,
    pub label: Option<u8>,
}

impl FeatureVector {
    pub fn predictors(&self) -> [f64; FEATURE_COUNT] {
        [
            self.duration_s,
            self.pkt_count,
            self.byte_count,
            self.mean_dur_src,
            self.mean_pkt_src,
            self.mean_byte_src,
            self.cv_dur_src,
            self.cv_pkt_src,
            self.cv_byte_src,
            self.paf_s,
            self.crs_pct,
            f64::from(u8::from(self.psi)),
        ]
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        FEATURE_NAMES
            .iter()
            .position(|n| *n == name)
            .map(|i| self.predictors()[i])
    }

    pub fn csv_fields(&self) -> Vec<String> {
        let mut out = vec![self.flow_id.clone(), self.src_ip.to_string()];
        let p = self.predictors();
        out.extend(p[..FEATURE_COUNT - 1].iter().map(|v| fmt_num(*v)));
        out.push(u8::from(self.psi).to_string());
        out.push(self.label.map(|l| l.to_string()).unwrap_or_default());
        out
    }
}

/// Shortest decimal form that round-trips.
pub(crate) fn fmt_num(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    n: f64,
    sum: f64,
    sum_sq: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.n += 1.0;
        self.sum += x;
        self.sum_sq += x * x;
    }

    fn mean(&self) -> f64 {
        self.sum / self.n
    }

    /// Population standard deviation over mean; zero for singletons.
    fn cv(&self) -> f64 {
        let m = self.mean();
        if self.n < 2.0 || m == 0.0 {
            return 0.0;
        }
        let var = (self.sum_sq / self.n - m * m).max(0.0);
        var.sqrt() / m.abs()
    }
}

/// Everything the detector may see at one switch for one snapshot.
pub struct FeatureContext<'a> {
    pub snapshot: &'a TableSnapshot,
    pub arrivals: &'a HashMap<MatchKey, Vec<Arrival>>,
    pub prefix_map: &'a HashMap<u16, Vec<Ipv4Prefix>>,
    pub bins: CrsBins,
}

fn packet_attrs(
    ctx: &FeatureContext<'_>,
    key: &MatchKey,
    duration: f64,
    arrivals: &[Arrival],
) -> Vec<PacketAttrs> {
    let header = key.protocol.header_bytes();
    arrivals
        .iter()
        .map(|a| {
            ctx.bins.attrs(
                key.src_ip,
                key.dst_ip,
                a.bytes,
                header,
                a.payload_entropy,
                duration,
            )
        })
        .collect()
}

/// Feature vectors for the rules at `indices` of the snapshot (all rules
/// when `None`). Per-source statistics and CRS always use the whole
/// snapshot as the window.
pub fn extract_features(
    ctx: &FeatureContext<'_>,
    indices: Option<&[usize]>,
) -> Result<Vec<FeatureVector>, AnomalyError> {
    let rules = ctx.snapshot.rules();
    let mut groups: HashMap<Ipv4Addr, [Moments; 3]> = HashMap::new();
    for r in rules {
        let g = groups.entry(r.key.src_ip).or_default();
        g[0].push(r.duration);
        g[1].push(r.packet_count as f64);
        g[2].push(r.byte_count as f64);
    }
    let empty = Vec::new();
    let per_rule: Vec<Vec<PacketAttrs>> = rules
        .iter()
        .map(|r| {
            let arr = ctx.arrivals.get(&r.key).unwrap_or(&empty);
            packet_attrs(ctx, &r.key, r.duration, arr)
        })
        .collect();
    let scorer = CrsScorer::new(per_rule.iter().flatten());

    let all: Vec<usize>;
    let indices = match indices {
        Some(i) => i,
        None => {
            all = (0..rules.len()).collect();
            &all
        }
    };
    let mut out = Vec::with_capacity(indices.len());
    for &i in indices {
        let r = &rules[i];
        let arr = ctx.arrivals.get(&r.key).unwrap_or(&empty);
        let times: Vec<f64> = arr.iter().map(|a| a.time).collect();
        let in_port = arr.first().map(|a| a.in_port).unwrap_or(r.key.in_port);
        let g = &groups[&r.key.src_ip];
        out.push(FeatureVector {
            flow_id: flow_id(&r.key),
            src_ip: r.key.src_ip,
            duration_s: r.duration,
            pkt_count: r.packet_count as f64,
            byte_count: r.byte_count as f64,
            mean_dur_src: g[0].mean(),
            mean_pkt_src: g[1].mean(),
            mean_byte_src: g[2].mean(),
            cv_dur_src: g[0].cv(),
            cv_pkt_src: g[1].cv(),
            cv_byte_src: g[2].cv(),
            paf_s: compute_paf(&times, r.duration),
            crs_pct: scorer.score(&per_rule[i]).pct,
            psi: check_spoofed(r.key.src_ip, in_port, ctx.prefix_map)?,
            label: None,
        });
    }
    Ok(out)
}
