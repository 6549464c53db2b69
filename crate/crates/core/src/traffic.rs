//! Legitimate background traffic and the LOFT attack.
//!
//! Attack planning follows the three relations
//! `c_used = p * q * t_idle`, `mri = anp / af` and `d_total = (c - c_used) / mri`.

use std::collections::HashSet;
use std::net::Ipv4Addr;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::addr::Ipv4Prefix;
use crate::flora::anomaly::entropy_of_counts;
use crate::flowtable::{MatchKey, Origin, Protocol};
use crate::netsim::{Endpoint, PacketEvent, TRACE_CSV_HEADER};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum TrafficError {
    #[error("{0}")]
    Domain(String),
    #[error(
        "attack frequency upper bound {af_max} s is not below the idle timeout {idle_timeout} s"
    )]
    PlanRejected { af_max: f64, idle_timeout: f64 },
    #[error("invalid profile: {0}")]
    InvalidProfile(String),
    #[error("trace replay: {0}")]
    Replay(String),
}

/// Background settings (flow table capacity, aggregate packets/s) per set.
pub const BACKGROUND_SETTINGS: [(usize, f64); 4] =
    [(1500, 250.0), (2000, 300.0), (2500, 400.0), (3000, 600.0)];

/// Attack settings (AF range in seconds, ANP) per set.
pub const ATTACK_SETTINGS: [((f64, f64), u32); 4] = [
    ((4.0, 8.0), 20),
    ((8.0, 12.0), 40),
    ((12.0, 16.0), 60),
    ((16.0, 19.0), 80),
];

/// Used capacity: `p` ports each carrying `q` new flows per second, every
/// rule living `t_idle` seconds.
pub fn compute_used_capacity(p: f64, q: f64, t_idle: f64) -> Result<f64, TrafficError> {
    if p < 0.0 || q < 0.0 || t_idle < 0.0 || !(p + q + t_idle).is_finite() {
        return Err(TrafficError::Domain(format!(
            "used capacity needs non-negative finite inputs, got p={p} q={q} t_idle={t_idle}"
        )));
    }
    Ok(p * q * t_idle)
}

/// Mean rate of increase of attack rules.
pub fn compute_mri(anp: f64, af: f64) -> Result<f64, TrafficError> {
    if !(af > 0.0) || !af.is_finite() || !(anp >= 0.0) {
        return Err(TrafficError::Domain(format!(
            "mri needs af > 0 and anp >= 0, got anp={anp} af={af}"
        )));
    }
    Ok(anp / af)
}

pub fn compute_attack_duration(c: f64, c_used: f64, mri: f64) -> Result<f64, TrafficError> {
    if !(mri > 0.0) || !mri.is_finite() {
        return Err(TrafficError::Domain(format!(
            "attack duration needs mri > 0, got {mri}"
        )));
    }
    if c < c_used {
        return Err(TrafficError::Domain(format!(
            "capacity {c} is below used capacity {c_used}"
        )));
    }
    Ok((c - c_used) / mri)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackPlan {
    pub af_min: f64,
    pub af_max: f64,
    pub anp: u32,
    pub rpr: u32,
    pub mri: f64,
    pub c: f64,
    pub c_used: f64,
    pub d_total: f64,
}

impl AttackPlan {
    pub fn expected_af(&self) -> f64 {
        0.5 * (self.af_min + self.af_max)
    }

    /// Number of attack rules the plan sustains at once.
    pub fn target_rules(&self) -> usize {
        (self.c - self.c_used).max(0.0).round() as usize
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serialises")
    }
}

/// Builds the attack plan against a table of capacity `c`. Used capacity is
/// estimated from the background's aggregate flow arrival rate spread over
/// `ports` ingress ports.
pub fn plan_attack(
    c: usize,
    background: &BackgroundProfile,
    ports: usize,
    af_range: (f64, f64),
    anp: u32,
    idle_timeout: f64,
) -> Result<AttackPlan, TrafficError> {
    let (af_min, af_max) = af_range;
    if !(af_min > 0.0) || af_min > af_max {
        return Err(TrafficError::Domain(format!(
            "af range must satisfy 0 < min <= max, got ({af_min}, {af_max})"
        )));
    }
    if af_max >= idle_timeout {
        return Err(TrafficError::PlanRejected {
            af_max,
            idle_timeout,
        });
    }
    if ports == 0 {
        return Err(TrafficError::Domain("port count must be positive".into()));
    }
    let p = ports as f64;
    let q = background.flow_arrival_rate() / p;
    let c_used = compute_used_capacity(p, q, idle_timeout)?;
    let af = 0.5 * (af_min + af_max);
    let mri = compute_mri(f64::from(anp), af)?;
    let c = c as f64;
    let d_total = compute_attack_duration(c, c_used, mri)?;
    let rpr = ((c - c_used) / af_min).ceil() as u32;
    Ok(AttackPlan {
        af_min,
        af_max,
        anp,
        rpr,
        mri,
        c,
        c_used,
        d_total,
    })
}

/// Synthetic payload model: each flow gets a 512-byte (by default) payload
/// whose byte histogram fixes the entropy carried by its packets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PayloadModel {
    pub sample_bytes: usize,
    /// Legitimate payloads draw bytes uniformly from an alphabet whose size
    /// is uniform in this range.
    pub legit_alphabet: (u16, u16),
    /// Attack payloads repeat one byte; this fraction of bytes is random.
    pub attack_noise: f64,
}

impl Default for PayloadModel {
    fn default() -> Self {
        Self {
            sample_bytes: 512,
            legit_alphabet: (48, 256),
            attack_noise: 0.05,
        }
    }
}

impl PayloadModel {
    fn entropy<R: Rng>(&self, rng: &mut R, origin: Origin) -> f64 {
        let mut counts = [0u64; 256];
        match origin {
            Origin::Legitimate => {
                let (lo, hi) = self.legit_alphabet;
                let k = rng.random_range(lo.max(1)..=hi.clamp(lo.max(1), 256)) as usize;
                for _ in 0..self.sample_bytes {
                    counts[rng.random_range(0..k)] += 1;
                }
            }
            Origin::Attack => {
                let fill = rng.random_range(0..256usize);
                for _ in 0..self.sample_bytes {
                    if rng.random_bool(self.attack_noise.clamp(0.0, 1.0)) {
                        counts[rng.random_range(0..256usize)] += 1;
                    } else {
                        counts[fill] += 1;
                    }
                }
            }
        }
        entropy_of_counts(&counts)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackgroundProfile {
    /// Aggregate packets per second.
    pub transmission_rate_pps: f64,
    /// Converts the packet rate into a flow arrival rate.
    pub packets_per_flow: f64,
    pub mean_flow_lifetime: f64,
    pub long_lived_fraction: f64,
    pub long_lived_lifetime: f64,
    pub packet_size_range: (u32, u32),
    /// Per-flow packet rate is Gaussian with this mean; by default it is
    /// derived so a mean-lifetime flow carries `packets_per_flow` packets.
    pub per_flow_rate_mean: Option<f64>,
    /// Standard deviation of per-flow rate, relative to its mean.
    pub per_flow_rate_cv: f64,
    /// Standard deviation of individual gaps, relative to the flow's gap.
    pub gap_cv: f64,
    pub payload: PayloadModel,
}

impl Default for BackgroundProfile {
    fn default() -> Self {
        Self {
            transmission_rate_pps: BACKGROUND_SETTINGS[0].1,
            packets_per_flow: 8.0,
            mean_flow_lifetime: 10.0,
            long_lived_fraction: 0.001,
            long_lived_lifetime: 200.0,
            packet_size_range: (64, 1500),
            per_flow_rate_mean: None,
            per_flow_rate_cv: 0.25,
            gap_cv: 0.2,
            payload: PayloadModel::default(),
        }
    }
}

impl BackgroundProfile {
    pub fn for_setting(index: usize) -> Self {
        Self {
            transmission_rate_pps: BACKGROUND_SETTINGS[index - 1].1,
            ..Self::default()
        }
    }

    pub fn flow_arrival_rate(&self) -> f64 {
        if self.packets_per_flow > 0.0 {
            self.transmission_rate_pps / self.packets_per_flow
        } else {
            0.0
        }
    }

    fn flow_rate_mean(&self) -> f64 {
        self.per_flow_rate_mean
            .unwrap_or(((self.packets_per_flow - 1.0) / self.mean_flow_lifetime).max(0.05))
    }

    pub fn validate(&self) -> Result<(), TrafficError> {
        let bad = |m: &str| Err(TrafficError::InvalidProfile(m.to_string()));
        if !(self.transmission_rate_pps >= 0.0) || !self.transmission_rate_pps.is_finite() {
            return bad("transmission_rate_pps must be non-negative");
        }
        if !(self.packets_per_flow >= 1.0) {
            return bad("packets_per_flow must be at least 1");
        }
        if !(self.mean_flow_lifetime > 0.0) || !(self.long_lived_lifetime > 0.0) {
            return bad("lifetimes must be positive");
        }
        if !(0.0..=1.0).contains(&self.long_lived_fraction) {
            return bad("long_lived_fraction must lie in [0, 1]");
        }
        let (lo, hi) = self.packet_size_range;
        if lo == 0 || lo > hi {
            return bad("packet_size_range must be a non-empty positive range");
        }
        if self.per_flow_rate_mean.is_some_and(|r| !(r > 0.0)) {
            return bad("per_flow_rate_mean must be positive");
        }
        if !(self.per_flow_rate_cv >= 0.0) || !(self.gap_cv >= 0.0) {
            return bad("coefficients of variation must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowRecord {
    pub key: MatchKey,
    pub src_host: usize,
    pub start: f64,
    pub lifetime: f64,
    pub packets: usize,
    pub origin: Origin,
}

#[derive(Debug, Clone, Default)]
pub struct Generated {
    pub events: Vec<PacketEvent>,
    pub flows: Vec<FlowRecord>,
}

const SERVICE_PORTS: [u16; 8] = [80, 443, 53, 22, 25, 123, 8080, 3306];

fn random_key<R: Rng>(rng: &mut R, src: Ipv4Addr, dst: &Endpoint) -> MatchKey {
    let protocol = if rng.random_bool(0.8) {
        Protocol::Tcp
    } else {
        Protocol::Udp
    };
    MatchKey {
        src_ip: src,
        dst_ip: dst
            .prefix
            .nth(rng.random_range(1..dst.prefix.size().clamp(2, 255))),
        src_port: rng.random_range(1024..=u16::MAX),
        dst_port: *SERVICE_PORTS.choose(rng).expect("non-empty"),
        protocol,
        in_port: 0,
    }
}

fn remote_targets<'a>(from: &Endpoint, targets: &'a [Endpoint]) -> Vec<&'a Endpoint> {
    let remote: Vec<_> = targets.iter().filter(|t| t.switch != from.switch).collect();
    if remote.is_empty() {
        targets.iter().filter(|t| t.host != from.host).collect()
    } else {
        remote
    }
}

/// Poisson flow arrivals between legitimate hosts on different access
/// switches, exponential lifetimes with a long-lived minority, Gaussian
/// packet gaps within a flow.
pub fn generate_background(
    profile: &BackgroundProfile,
    hosts: &[Endpoint],
    seed: u64,
    t_start: f64,
    t_end: f64,
) -> Result<Generated, TrafficError> {
    profile.validate()?;
    let rate = profile.flow_arrival_rate();
    let mut out = Generated::default();
    if rate == 0.0 || t_end <= t_start || hosts.len() < 2 {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let arrivals = Exp::new(rate).expect("positive rate");
    let lifetimes = Exp::new(1.0 / profile.mean_flow_lifetime).expect("positive mean");
    let r_mean = profile.flow_rate_mean();
    let rate_dist = Normal::new(r_mean, r_mean * profile.per_flow_rate_cv).expect("finite");
    let (smin, smax) = profile.packet_size_range;
    let mut used = HashSet::new();

    let mut t = t_start + arrivals.sample(&mut rng);
    while t < t_end {
        let src = hosts.choose(&mut rng).expect("non-empty");
        let dsts = remote_targets(src, hosts);
        let dst = *dsts.choose(&mut rng).expect("two hosts");
        let src_ip = src
            .prefix
            .nth(rng.random_range(1..src.prefix.size().clamp(2, 255)));
        let key = loop {
            let k = random_key(&mut rng, src_ip, dst);
            if used.insert(k) {
                break k;
            }
        };
        let lifetime = if rng.random_bool(profile.long_lived_fraction) {
            profile.long_lived_lifetime
        } else {
            lifetimes.sample(&mut rng)
        };
        let flow_rate = rate_dist.sample(&mut rng).max(0.1 * r_mean);
        let gap_mean = 1.0 / flow_rate;
        let gaps = Normal::new(gap_mean, gap_mean * profile.gap_cv).expect("finite");
        let entropy = profile.payload.entropy(&mut rng, Origin::Legitimate);

        let mut pt = t;
        let mut packets = 0;
        loop {
            out.events.push(PacketEvent {
                time: pt,
                src_host: src.host,
                key,
                bytes: rng.random_range(smin..=smax),
                payload_entropy: entropy,
                origin: Origin::Legitimate,
            });
            packets += 1;
            let g = gaps.sample(&mut rng).max(0.05 * gap_mean);
            if pt + g > t + lifetime || pt + g >= t_end {
                break;
            }
            pt += g;
        }
        out.flows.push(FlowRecord {
            key,
            src_host: src.host,
            start: t,
            lifetime,
            packets,
            origin: Origin::Legitimate,
        });
        t += arrivals.sample(&mut rng);
    }
    out.events.sort_by(|a, b| a.time.total_cmp(&b.time));
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpoofConfig {
    pub spoofed_fraction: f64,
    /// Addresses each attacker rotates through when spoofing.
    pub pool_size: usize,
    /// Unallocated block spoofed addresses are drawn from.
    pub prefix: Ipv4Prefix,
}

impl Default for SpoofConfig {
    fn default() -> Self {
        Self {
            spoofed_fraction: 0.5,
            pool_size: 8,
            prefix: Ipv4Prefix::new(Ipv4Addr::new(172, 16, 0, 0), 12).expect("valid"),
        }
    }
}

fn draw_af<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    let (a, b) = (lo.ceil(), hi.floor());
    if a <= b {
        rng.random_range(a as i64..=b as i64) as f64
    } else if lo < hi {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Runs the plan from `t_start`: every AF cycle re-sends one packet per live
/// attack key (in a fixed order) and then introduces up to `anp` new keys,
/// all spread evenly over the cycle. The key population is capped at the
/// plan's target so the send rate never exceeds `rpr`.
pub fn generate_attack(
    plan: &AttackPlan,
    attackers: &[Endpoint],
    targets: &[Endpoint],
    profile: &BackgroundProfile,
    spoof: &SpoofConfig,
    seed: u64,
    t_start: f64,
    t_end: f64,
) -> Result<Generated, TrafficError> {
    let mut out = Generated::default();
    if attackers.is_empty() || targets.is_empty() || t_end <= t_start || plan.anp == 0 {
        return Ok(out);
    }
    if !(t_start >= 0.0) {
        return Err(TrafficError::Domain(format!(
            "t_start must be >= 0, got {t_start}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pools: Vec<Vec<Ipv4Addr>> = attackers
        .iter()
        .map(|a| {
            let mut pool = Vec::new();
            while pool.len() < spoof.pool_size {
                let ip = spoof
                    .prefix
                    .nth(rng.random_range(1..spoof.prefix.size() - 1));
                if !pool.contains(&ip) && ip != a.ip {
                    pool.push(ip);
                }
            }
            pool
        })
        .collect();
    let cap = plan
        .target_rules()
        .min((f64::from(plan.rpr) * plan.af_min).floor() as usize);
    let (smin, smax) = profile.packet_size_range;

    struct Live {
        key: MatchKey,
        host: usize,
        bytes: u32,
        entropy: f64,
    }
    let mut live: Vec<Live> = Vec::new();
    let mut used = HashSet::new();
    let mut next_attacker = 0usize;
    let mut t = t_start;
    while t < t_end {
        let af = draw_af(&mut rng, plan.af_min, plan.af_max);
        let fresh = (plan.anp as usize).min(cap.saturating_sub(live.len()));
        for _ in 0..fresh {
            let ai = next_attacker % attackers.len();
            next_attacker += 1;
            let a = &attackers[ai];
            let src = if !pools[ai].is_empty() && rng.random_bool(spoof.spoofed_fraction) {
                *pools[ai].choose(&mut rng).expect("non-empty")
            } else {
                a.ip
            };
            let dsts = remote_targets(a, targets);
            let dst = *dsts.choose(&mut rng).expect("targets");
            let key = loop {
                let k = random_key(&mut rng, src, dst);
                if used.insert(k) {
                    break k;
                }
            };
            let bytes = rng.random_range(smin..=smax);
            let entropy = profile.payload.entropy(&mut rng, Origin::Attack);
            out.flows.push(FlowRecord {
                key,
                src_host: a.host,
                start: f64::NAN,
                lifetime: f64::NAN,
                packets: 0,
                origin: Origin::Attack,
            });
            live.push(Live {
                key,
                host: a.host,
                bytes,
                entropy,
            });
        }
        let refreshes = live.len() - fresh;
        let total = live.len();
        let spacing = af / total as f64;
        for (i, l) in live.iter().enumerate() {
            let pt = t + i as f64 * spacing;
            if pt >= t_end {
                break;
            }
            if i >= refreshes {
                let rec = &mut out.flows[i];
                rec.start = pt;
            }
            out.flows[i].packets += 1;
            out.events.push(PacketEvent {
                time: pt,
                src_host: l.host,
                key: l.key,
                bytes: l.bytes,
                payload_entropy: l.entropy,
                origin: Origin::Attack,
            });
        }
        t += af;
    }
    for f in &mut out.flows {
        if f.start.is_finite() {
            f.lifetime = t_end - f.start;
        }
    }
    out.flows.retain(|f| f.packets > 0);
    out.events.sort_by(|a, b| a.time.total_cmp(&b.time));
    Ok(out)
}

/// Reads a packet trace in the simulator's event-export schema. Rows are
/// treated as legitimate background; host names are resolved by `host_index`.
pub fn read_trace_csv<R: std::io::Read>(
    reader: R,
    host_index: impl Fn(&str) -> Option<usize>,
    payload_entropy: f64,
) -> Result<Vec<PacketEvent>, TrafficError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| TrafficError::Replay(e.to_string()))?
        .clone();
    if headers.iter().collect::<Vec<_>>() != TRACE_CSV_HEADER {
        return Err(TrafficError::Replay(format!(
            "expected header {:?}",
            TRACE_CSV_HEADER.join(",")
        )));
    }
    let mut events = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| TrafficError::Replay(e.to_string()))?;
        let bad = |what: &str| TrafficError::Replay(format!("row {}: bad {what}", line + 2));
        let time: f64 = rec[0].parse().map_err(|_| bad("time_s"))?;
        let src_host = host_index(&rec[1]).ok_or_else(|| bad("host"))?;
        let key = MatchKey {
            src_ip: rec[2].parse().map_err(|_| bad("src_ip"))?,
            dst_ip: rec[3].parse().map_err(|_| bad("dst_ip"))?,
            src_port: rec[4].parse().map_err(|_| bad("sport"))?,
            dst_port: rec[5].parse().map_err(|_| bad("dport"))?,
            protocol: rec[6].parse().map_err(|_| bad("proto"))?,
            in_port: 0,
        };
        let bytes: u32 = rec[7].parse().map_err(|_| bad("bytes"))?;
        if time < 0.0 || bytes == 0 {
            return Err(bad("event"));
        }
        events.push(PacketEvent {
            time,
            src_host,
            key,
            bytes,
            payload_entropy,
            origin: Origin::Legitimate,
        });
    }
    events.sort_by(|a, b| a.time.total_cmp(&b.time));
    Ok(events)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netsim::{HostRole, Simulator, TopologyConfig};

    #[test]
    fn used_capacity_examples() {
        assert_eq!(compute_used_capacity(4.0, 0.0, 20.0).unwrap(), 0.0);
        assert_eq!(compute_used_capacity(1.0, 1.0, 20.0).unwrap(), 20.0);
        assert_eq!(compute_used_capacity(4.0, 10.0, 20.0).unwrap(), 800.0);
    }

    #[test]
    fn mri_examples() {
        assert_eq!(compute_mri(0.0, 7.0).unwrap(), 0.0);
        assert_eq!(compute_mri(20.0, 4.0).unwrap(), 5.0);
        assert_eq!(compute_mri(80.0, 16.0).unwrap(), 5.0);
        assert!(compute_mri(1.0, 0.0).is_err());
    }

    #[test]
    fn duration_examples() {
        assert_eq!(compute_attack_duration(1500.0, 1500.0, 5.0).unwrap(), 0.0);
        assert_eq!(compute_attack_duration(1500.0, 500.0, 5.0).unwrap(), 200.0);
        assert_eq!(compute_attack_duration(2000.0, 800.0, 4.0).unwrap(), 300.0);
        assert!(compute_attack_duration(1.0, 2.0, 5.0).is_err());
        assert!(compute_attack_duration(2.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn composed_plan() {
        // 2 flows/s over 4 ports for 20 s -> 800 used; MRI 20/6
        let bg = BackgroundProfile {
            transmission_rate_pps: 320.0,
            packets_per_flow: 8.0,
            ..Default::default()
        };
        let plan = plan_attack(1500, &bg, 4, (4.0, 8.0), 20, 20.0).unwrap();
        assert!((plan.c_used - 800.0).abs() < 1e-9);
        assert!((plan.d_total - 210.0).abs() < 1e-9);
        assert_eq!(plan.rpr, 175);
    }

    #[test]
    fn plan_bounds() {
        let bg = BackgroundProfile::default();
        assert!(plan_attack(3000, &bg, 5, (16.0, 19.0), 80, 20.0).is_ok());
        assert!(matches!(
            plan_attack(1500, &bg, 5, (5.0, 25.0), 20, 20.0),
            Err(TrafficError::PlanRejected { .. })
        ));
    }

    #[test]
    fn plan_json_keys() {
        let plan =
            plan_attack(1500, &BackgroundProfile::default(), 5, (4.0, 8.0), 20, 20.0).unwrap();
        let v: serde_json::Value = serde_json::from_str(&plan.to_json()).unwrap();
        let mut keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        keys.sort();
        assert_eq!(
            keys,
            ["af_max", "af_min", "anp", "c", "c_used", "d_total", "mri", "rpr"]
        );
    }

    fn endpoints() -> (Vec<Endpoint>, Vec<Endpoint>) {
        let sim = Simulator::new(TopologyConfig::paper_default(1500), 0).unwrap();
        (
            sim.endpoints(Some(HostRole::Legitimate)),
            sim.endpoints(Some(HostRole::Attacker)),
        )
    }

    #[test]
    fn zero_rate_background_is_empty() {
        let (legit, _) = endpoints();
        let p = BackgroundProfile {
            transmission_rate_pps: 0.0,
            ..Default::default()
        };
        assert!(generate_background(&p, &legit, 1, 0.0, 100.0)
            .unwrap()
            .events
            .is_empty());
    }

    #[test]
    fn background_is_seed_deterministic() {
        let (legit, _) = endpoints();
        let p = BackgroundProfile::default();
        let a = generate_background(&p, &legit, 9, 0.0, 100.0).unwrap();
        let b = generate_background(&p, &legit, 9, 0.0, 100.0).unwrap();
        assert_eq!(a.events, b.events);
        let c = generate_background(&p, &legit, 10, 0.0, 100.0).unwrap();
        assert_ne!(a.events, c.events);
    }

    #[test]
    fn anp_accumulates_per_cycle() {
        let (legit, attackers) = endpoints();
        let bg = BackgroundProfile::default();
        let plan = plan_attack(1500, &bg, 5, (4.0, 4.0), 20, 20.0).unwrap();
        // three cycles of exactly 4 s
        let g = generate_attack(
            &plan,
            &attackers,
            &legit,
            &bg,
            &SpoofConfig::default(),
            3,
            0.0,
            12.0,
        )
        .unwrap();
        let keys: HashSet<_> = g.events.iter().map(|e| e.key).collect();
        assert_eq!(keys.len(), 60);
        assert_eq!(g.events.len(), 20 + 40 + 60);
    }

    #[test]
    fn attack_refresh_gaps_stay_below_idle_timeout() {
        let (legit, attackers) = endpoints();
        let bg = BackgroundProfile::default();
        for (af, anp) in ATTACK_SETTINGS {
            let plan = plan_attack(1500, &bg, 5, af, anp, 20.0).unwrap();
            let g = generate_attack(
                &plan,
                &attackers,
                &legit,
                &bg,
                &SpoofConfig::default(),
                5,
                10.0,
                400.0,
            )
            .unwrap();
            let mut last = std::collections::HashMap::new();
            for e in &g.events {
                if let Some(prev) = last.insert(e.key, e.time) {
                    assert!(e.time - prev < 20.0, "gap {}", e.time - prev);
                }
            }
            // rate never exceeds rpr within any AF window
            let lo = plan.af_min;
            let mut j = 0;
            for i in 0..g.events.len() {
                while g.events[i].time - g.events[j].time >= lo {
                    j += 1;
                }
                assert!(((i - j + 1) as f64) <= f64::from(plan.rpr) * lo + 1.0);
            }
        }
    }

    #[test]
    fn attack_keys_never_collide_with_background() {
        let (legit, attackers) = endpoints();
        let bg = BackgroundProfile::default();
        let plan = plan_attack(1500, &bg, 5, (4.0, 8.0), 100, 20.0).unwrap();
        let b = generate_background(&bg, &legit, 1, 0.0, 200.0).unwrap();
        let a = generate_attack(
            &plan,
            &attackers,
            &legit,
            &bg,
            &SpoofConfig::default(),
            1,
            60.0,
            200.0,
        )
        .unwrap();
        let bk: HashSet<_> = b.events.iter().map(|e| e.key).collect();
        assert!(a.events.iter().all(|e| !bk.contains(&e.key)));
        let spoofed = a
            .flows
            .iter()
            .filter(|f| SpoofConfig::default().prefix.contains(f.key.src_ip))
            .count() as f64;
        let frac = spoofed / a.flows.len() as f64;
        assert!((0.4..0.6).contains(&frac), "spoofed fraction {frac}");
    }

    #[test]
    fn trace_roundtrip() {
        use crate::netsim::{write_trace_csv, PacketOutcome, TraceRecord};
        let key = MatchKey {
            src_ip: Ipv4Addr::new(10, 0, 2, 9),
            dst_ip: Ipv4Addr::new(10, 0, 4, 3),
            src_port: 4000,
            dst_port: 80,
            protocol: Protocol::Udp,
            in_port: 0,
        };
        let rec = TraceRecord {
            time: 1.25,
            host: "h2".into(),
            key,
            bytes: 300,
            outcome: PacketOutcome::Miss,
            rtt_ms: Some(60.0),
        };
        let mut buf = Vec::new();
        write_trace_csv(&mut buf, &[rec]).unwrap();
        let ev = read_trace_csv(buf.as_slice(), |h| (h == "h2").then_some(1), 7.0).unwrap();
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].key, key);
        assert_eq!(ev[0].time, 1.25);
        assert_eq!(ev[0].src_host, 1);
    }
}
