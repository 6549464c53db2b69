//! Anomaly predictor kernels: packet arrival frequency, entropy and
//! information gain, content relevance score and the ingress spoofing check.

use std::collections::{BTreeMap, HashMap};
use std::hash::Hash;
use std::net::Ipv4Addr;

use crate::addr::Ipv4Prefix;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum AnomalyError {
    #[error("not a probability distribution: {0}")]
    InvalidDistribution(String),
    #[error("labels and attribute values differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    Empty,
    #[error("ingress port {0} has no prefix allocation")]
    UnknownPort(u16),
}

/// Mean gap between consecutive arrivals; a rule seen fewer than twice
/// reports its own duration.
pub fn compute_paf(arrival_times: &[f64], rule_duration: f64) -> f64 {
    if arrival_times.len() < 2 {
        return rule_duration;
    }
    let span = arrival_times[arrival_times.len() - 1] - arrival_times[0];
    span / (arrival_times.len() - 1) as f64
}

pub fn shannon_entropy(dist: &[f64]) -> Result<f64, AnomalyError> {
    if dist.is_empty() {
        return Err(AnomalyError::Empty);
    }
    if dist.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
        return Err(AnomalyError::InvalidDistribution(
            "negative or non-finite probability".into(),
        ));
    }
    let total: f64 = dist.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(AnomalyError::InvalidDistribution(format!(
            "sums to {total}"
        )));
    }
    Ok(dist
        .iter()
        .filter(|p| **p > 0.0)
        .map(|p| -p * p.log2())
        .sum())
}

/// Entropy in bits of the empirical distribution given by `counts`.
pub fn entropy_of_counts(counts: &[u64]) -> f64 {
    let n: u64 = counts.iter().sum();
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    counts
        .iter()
        .filter(|c| **c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum()
}

fn binary_entropy(k: f64, n: f64) -> f64 {
    if k <= 0.0 || k >= n {
        return 0.0;
    }
    let p = k / n;
    -(p * p.log2() + (1.0 - p) * (1.0 - p).log2())
}

/// IG(A) = H(D) - sum_i |D_i|/|D| H(D_i) over the partitions induced by A.
pub fn information_gain<L, A>(labels: &[L], attribute: &[A]) -> Result<f64, AnomalyError>
where
    L: Eq + Hash,
    A: Eq + Hash,
{
    if labels.len() != attribute.len() {
        return Err(AnomalyError::LengthMismatch(labels.len(), attribute.len()));
    }
    if labels.is_empty() {
        return Err(AnomalyError::Empty);
    }
    let n = labels.len() as f64;
    let mut label_counts: HashMap<&L, u64> = HashMap::new();
    let mut parts: HashMap<&A, HashMap<&L, u64>> = HashMap::new();
    for (l, a) in labels.iter().zip(attribute) {
        *label_counts.entry(l).or_default() += 1;
        *parts.entry(a).or_default().entry(l).or_default() += 1;
    }
    let sorted = |m: &HashMap<&L, u64>| {
        let mut c: Vec<u64> = m.values().copied().collect();
        c.sort_unstable();
        c
    };
    let h = entropy_of_counts(&sorted(&label_counts));
    let mut terms: Vec<f64> = parts
        .values()
        .map(|p| {
            let c = sorted(p);
            let size: u64 = c.iter().sum();
            size as f64 / n * entropy_of_counts(&c)
        })
        .collect();
    terms.sort_by(f64::total_cmp);
    let cond: f64 = terms.iter().sum();
    Ok((h - cond).max(0.0))
}

/// The six per-packet attributes scored by CRS, already discretised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PacketAttrs {
    pub src_ip: Ipv4Addr,
    pub dst_ip: Ipv4Addr,
    pub packet_size: u32,
    pub payload_size: u32,
    pub payload_entropy: u32,
    pub duration: u32,
}

pub const CRS_ATTRIBUTES: usize = 6;

impl PacketAttrs {
    fn values(&self) -> [u64; CRS_ATTRIBUTES] {
        [
            u64::from(u32::from(self.src_ip)),
            u64::from(u32::from(self.dst_ip)),
            u64::from(self.packet_size),
            u64::from(self.payload_size),
            u64::from(self.payload_entropy),
            u64::from(self.duration),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CrsBins {
    pub size_bytes: u32,
    pub entropy_bits: f64,
    pub duration_s: f64,
}

impl Default for CrsBins {
    fn default() -> Self {
        Self {
            size_bytes: 64,
            entropy_bits: 0.5,
            duration_s: 5.0,
        }
    }
}

impl CrsBins {
    pub fn attrs(
        &self,
        src_ip: Ipv4Addr,
        dst_ip: Ipv4Addr,
        bytes: u32,
        header: u32,
        entropy: f64,
        duration: f64,
    ) -> PacketAttrs {
        PacketAttrs {
            src_ip,
            dst_ip,
            packet_size: bytes / self.size_bytes.max(1),
            payload_size: bytes.saturating_sub(header) / self.size_bytes.max(1),
            payload_entropy: (entropy / self.entropy_bits).floor().max(0.0) as u32,
            duration: (duration / self.duration_s).floor().max(0.0) as u32,
        }
    }
}

/// Content relevance scoring over one window. Each flow's packets are
/// labelled "member" against the whole window population; the score is the
/// summed information gain over the six attributes divided by the summed
/// label entropy, in percent.
#[derive(Debug)]
pub struct CrsScorer {
    totals: [HashMap<u64, u64>; CRS_ATTRIBUTES],
    n: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrsScore {
    pub pct: f64,
    /// Population too small (or flow is the whole population).
    pub degenerate: bool,
}

impl CrsScorer {
    pub fn new<'a>(population: impl IntoIterator<Item = &'a PacketAttrs>) -> Self {
        let mut totals: [HashMap<u64, u64>; CRS_ATTRIBUTES] = Default::default();
        let mut n = 0;
        for p in population {
            for (t, v) in totals.iter_mut().zip(p.values()) {
                *t.entry(v).or_default() += 1;
            }
            n += 1;
        }
        Self { totals, n }
    }

    /// `flow` must be a sub-multiset of the population the scorer was built on.
    pub fn score(&self, flow: &[PacketAttrs]) -> CrsScore {
        let n = self.n as f64;
        let k = flow.len() as f64;
        if self.n < 2 || flow.is_empty() || flow.len() as u64 >= self.n {
            return CrsScore {
                pct: 0.0,
                degenerate: true,
            };
        }
        let h = binary_entropy(k, n);
        let mut ig_sum = 0.0;
        // ordered so the float sum below does not depend on hash order
        let mut local: BTreeMap<u64, u64> = BTreeMap::new();
        for a in 0..CRS_ATTRIBUTES {
            local.clear();
            for p in flow {
                *local.entry(p.values()[a]).or_default() += 1;
            }
            let cond: f64 = local
                .iter()
                .map(|(v, &kv)| {
                    let nv = self.totals[a][v] as f64;
                    nv / n * binary_entropy(kv as f64, nv)
                })
                .sum();
            // partitions holding no member packets are pure
            ig_sum += (h - cond).max(0.0);
        }
        CrsScore {
            pct: (100.0 * ig_sum / (CRS_ATTRIBUTES as f64 * h)).clamp(0.0, 100.0),
            degenerate: false,
        }
    }
}

/// BCP38-style ingress check: the source is possibly spoofed when it falls
/// outside every prefix allocated behind its ingress port.
pub fn check_spoofed(
    src_ip: Ipv4Addr,
    in_port: u16,
    prefix_map: &HashMap<u16, Vec<Ipv4Prefix>>,
) -> Result<bool, AnomalyError> {
    let prefixes = prefix_map
        .get(&in_port)
        .ok_or(AnomalyError::UnknownPort(in_port))?;
    Ok(!prefixes.iter().any(|p| p.contains(src_ip)))
}
