//! OpenFlow-style exact-match flow table with idle timeouts, a hard capacity
//! and FIFO replacement.
//!
//! Time is an externally supplied `f64` in seconds and must be monotone across
//! calls. Idle expiry is inclusive (a rule whose idle time has reached its
//! timeout is gone) and is applied before any other work an operation does at
//! the same instant, so a packet can never refresh a rule that is already dead.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::net::Ipv4Addr;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Tcp,
    Udp,
    Icmp,
}

impl Protocol {
    pub const ALL: [Protocol; 3] = [Protocol::Tcp, Protocol::Udp, Protocol::Icmp];

    pub fn as_str(&self) -> &'static str {
        match self {
            Protocol::Tcp => "tcp",
            Protocol::Udp => "udp",
            Protocol::Icmp => "icmp",
        }
    }

    /// Transport + IP header overhead, used to derive payload sizes.
    pub fn header_bytes(&self) -> u32 {
        match self {
            Protocol::Tcp => 54,
            Protocol::Udp => 42,
            Protocol::Icmp => 42,
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Protocol {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "tcp" => Ok(Protocol::Tcp),
            "udp" => Ok(Protocol::Udp),
            "icmp" => Ok(Protocol::Icmp),
            other => Err(format!("unknown protocol `{other}`")),
        }
    }
}

/// One header field a switch may match on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchField {
    SrcIp,
    DstIp,
    SrcPort,
    DstPort,
    Protocol,
    InPort,
}

impl MatchField {
    pub const ALL: [MatchField; 6] = [
        MatchField::SrcIp,
        MatchField::DstIp,
        MatchField::SrcPort,
        MatchField::DstPort,
        MatchField::Protocol,
        MatchField::InPort,
    ];

    /// Fields a prober can rewrite in a crafted packet. The ingress port is
    /// decided by the network, not the sender.
    pub const MUTABLE: [MatchField; 5] = [
        MatchField::SrcIp,
        MatchField::DstIp,
        MatchField::SrcPort,
        MatchField::DstPort,
        MatchField::Protocol,
    ];

    fn bit(self) -> u8 {
        1 << (self as u8)
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            MatchField::SrcIp => "src_ip",
            MatchField::DstIp => "dst_ip",
            MatchField::SrcPort => "src_port",
            MatchField::DstPort => "dst_port",
            MatchField::Protocol => "protocol",
            MatchField::InPort => "in_port",
        }
    }
}

impl fmt::Display for MatchField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Set of enabled match fields, one per switch.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(from = "Vec<MatchField>", into = "Vec<MatchField>")]
pub struct FieldSet(u8);

impl FieldSet {
    pub const fn empty() -> Self {
        FieldSet(0)
    }

    pub fn all() -> Self {
        MatchField::ALL.into_iter().collect()
    }

    /// The 5-tuple without the ingress port.
    pub fn five_tuple() -> Self {
        MatchField::MUTABLE.into_iter().collect()
    }

    pub fn contains(&self, field: MatchField) -> bool {
        self.0 & field.bit() != 0
    }

    pub fn insert(&mut self, field: MatchField) {
        self.0 |= field.bit();
    }

    pub fn remove(&mut self, field: MatchField) {
        self.0 &= !field.bit();
    }

    pub fn is_empty(&self) -> bool {
        self.0 == 0
    }

    pub fn len(&self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn iter(&self) -> impl Iterator<Item = MatchField> + '_ {
        MatchField::ALL.into_iter().filter(|f| self.contains(*f))
    }

    pub fn union(&self, other: FieldSet) -> FieldSet {
        FieldSet(self.0 | other.0)
    }

    pub fn is_subset(&self, other: FieldSet) -> bool {
        self.0 & !other.0 == 0
    }
}

impl fmt::Debug for FieldSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

impl FromIterator<MatchField> for FieldSet {
    fn from_iter<I: IntoIterator<Item = MatchField>>(iter: I) -> Self {
        let mut set = FieldSet::empty();
        for f in iter {
            set.insert(f);
        }
        set
    }
}

impl From<Vec<MatchField>> for FieldSet {
    fn from(v: Vec<MatchField>) -> Self {
        v.into_iter().collect()
    }
}

impl From<FieldSet> for Vec<MatchField> {
    fn from(s: FieldSet) -> Self {
        s.iter().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MatchKey {
    pub src_ip: Ipv4Addr,
    pub dst_ip: Ipv4Addr,
    pub src_port: u16,
    pub dst_port: u16,
    pub protocol: Protocol,
    pub in_port: u16,
}

impl MatchKey {
    /// Projection onto `fields`: disabled fields are set to a fixed neutral
    /// value so that two packets agreeing on every enabled field produce equal
    /// keys.
    pub fn masked(&self, fields: FieldSet) -> MatchKey {
        MatchKey {
            src_ip: if fields.contains(MatchField::SrcIp) {
                self.src_ip
            } else {
                Ipv4Addr::UNSPECIFIED
            },
            dst_ip: if fields.contains(MatchField::DstIp) {
                self.dst_ip
            } else {
                Ipv4Addr::UNSPECIFIED
            },
            src_port: if fields.contains(MatchField::SrcPort) {
                self.src_port
            } else {
                0
            },
            dst_port: if fields.contains(MatchField::DstPort) {
                self.dst_port
            } else {
                0
            },
            protocol: if fields.contains(MatchField::Protocol) {
                self.protocol
            } else {
                Protocol::Tcp
            },
            in_port: if fields.contains(MatchField::InPort) {
                self.in_port
            } else {
                0
            },
        }
    }

    pub fn with_in_port(mut self, port: u16) -> MatchKey {
        self.in_port = port;
        self
    }
}

/// Ground-truth label of the traffic that created a rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Legitimate,
    Attack,
}

impl Origin {
    pub fn as_str(&self) -> &'static str {
        match self {
            Origin::Legitimate => "legitimate",
            Origin::Attack => "attack",
        }
    }

    pub fn label(&self) -> u8 {
        match self {
            Origin::Legitimate => 0,
            Origin::Attack => 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FlowRule {
    pub key: MatchKey,
    pub install_time: f64,
    pub last_match_time: f64,
    pub packet_count: u64,
    pub byte_count: u64,
    pub idle_timeout: f64,
    origin: Origin,
}

impl FlowRule {
    fn expires_at(&self) -> f64 {
        self.last_match_time + self.idle_timeout
    }

    pub fn duration(&self, now: f64) -> f64 {
        (now - self.install_time).max(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvictionCause {
    IdleTimeout,
    FifoReplacement,
    Mitigation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Eviction {
    pub time: f64,
    pub key: MatchKey,
    pub cause: EvictionCause,
    pub origin: Origin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InstallOutcome {
    Installed,
    Replaced(MatchKey),
    Rejected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchResult {
    Hit,
    Miss,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum FlowTableError {
    #[error("rule for {0:?} is already installed")]
    DuplicateKey(MatchKey),
    #[error("idle timeout must be positive and finite, got {0}")]
    InvalidIdleTimeout(f64),
}

/// Counters and age of one rule as seen by the controller.
#[derive(Debug, Clone, PartialEq)]
pub struct RuleStats {
    pub key: MatchKey,
    pub duration: f64,
    pub packet_count: u64,
    pub byte_count: u64,
}

/// Read-only copy of a table at one instant. Ground-truth origins are kept in
/// a separate column so that detector code can take `rules()` alone.
#[derive(Debug, Clone, PartialEq)]
pub struct TableSnapshot {
    pub time: f64,
    pub capacity: usize,
    rules: Vec<RuleStats>,
    origins: Vec<Origin>,
}

impl TableSnapshot {
    pub fn new(time: f64, capacity: usize, rows: Vec<(RuleStats, Origin)>) -> Self {
        let (rules, origins) = rows.into_iter().unzip();
        Self {
            time,
            capacity,
            rules,
            origins,
        }
    }

    pub fn rules(&self) -> &[RuleStats] {
        &self.rules
    }

    pub fn origin(&self, idx: usize) -> Origin {
        self.origins[idx]
    }

    pub fn rows(&self) -> impl Iterator<Item = (&RuleStats, Origin)> {
        self.rules.iter().zip(self.origins.iter().copied())
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn count_origin(&self, origin: Origin) -> usize {
        self.origins.iter().filter(|o| **o == origin).count()
    }

    /// CSV rows in the column order time_s, flow_id, src_ip, dst_ip,
    /// src_port, dst_port, proto, in_port, duration_s, pkt_count, byte_count,
    /// origin.
    pub fn write_csv<W: std::io::Write>(&self, w: &mut csv::Writer<W>) -> csv::Result<()> {
        for (rule, origin) in self.rows() {
            let k = &rule.key;
            w.write_record([
                format_time(self.time),
                flow_id(k),
                k.src_ip.to_string(),
                k.dst_ip.to_string(),
                k.src_port.to_string(),
                k.dst_port.to_string(),
                k.protocol.to_string(),
                k.in_port.to_string(),
                format_time(rule.duration),
                rule.packet_count.to_string(),
                rule.byte_count.to_string(),
                origin.as_str().to_string(),
            ])?;
        }
        Ok(())
    }
}

pub const SNAPSHOT_CSV_HEADER: [&str; 12] = [
    "time_s",
    "flow_id",
    "src_ip",
    "dst_ip",
    "src_port",
    "dst_port",
    "proto",
    "in_port",
    "duration_s",
    "pkt_count",
    "byte_count",
    "origin",
];

/// Stable textual flow identifier derived from the 5-tuple.
pub fn flow_id(k: &MatchKey) -> String {
    format!(
        "{}:{}-{}:{}-{}",
        k.src_ip, k.src_port, k.dst_ip, k.dst_port, k.protocol
    )
}

pub(crate) fn format_time(t: f64) -> String {
    format!("{t:.6}")
}

/// Total order on finite times for the expiry index.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Deadline(f64);

impl Eq for Deadline {}

impl PartialOrd for Deadline {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Deadline {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

#[derive(Debug, Clone)]
pub struct FlowTable {
    capacity: usize,
    /// Rules keyed by installation sequence number, so iteration order is
    /// installation order and the first entry is the FIFO victim.
    rules: BTreeMap<u64, FlowRule>,
    index: HashMap<MatchKey, u64>,
    deadlines: BTreeSet<(Deadline, u64)>,
    next_seq: u64,
    total_overflows: u64,
    installed_total: u64,
    eviction_log: Vec<Eviction>,
    clock: f64,
}

impl FlowTable {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            rules: BTreeMap::new(),
            index: HashMap::new(),
            deadlines: BTreeSet::new(),
            next_seq: 0,
            total_overflows: 0,
            installed_total: 0,
            eviction_log: Vec::new(),
            clock: 0.0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.rules.len() >= self.capacity
    }

    pub fn total_overflows(&self) -> u64 {
        self.total_overflows
    }

    pub fn installed_total(&self) -> u64 {
        self.installed_total
    }

    pub fn eviction_log(&self) -> &[Eviction] {
        &self.eviction_log
    }

    pub fn contains(&self, key: &MatchKey) -> bool {
        self.index.contains_key(key)
    }

    pub fn get(&self, key: &MatchKey) -> Option<&FlowRule> {
        self.index.get(key).and_then(|seq| self.rules.get(seq))
    }

    /// Rules in installation order.
    pub fn rules(&self) -> impl Iterator<Item = &FlowRule> {
        self.rules.values()
    }

    /// Number of present rules created by traffic of the given origin.
    pub fn count_origin(&self, origin: Origin) -> usize {
        self.rules.values().filter(|r| r.origin == origin).count()
    }

    fn observe(&mut self, now: f64) {
        debug_assert!(
            now + 1e-9 >= self.clock,
            "flow table time went backwards: {now} < {}",
            self.clock
        );
        if now > self.clock {
            self.clock = now;
        }
    }

    fn remove_seq(&mut self, seq: u64, now: f64, cause: EvictionCause) -> FlowRule {
        let rule = self.rules.remove(&seq).expect("indexed rule present");
        self.index.remove(&rule.key);
        self.deadlines.remove(&(Deadline(rule.expires_at()), seq));
        self.eviction_log.push(Eviction {
            time: now,
            key: rule.key,
            cause,
            origin: rule.origin,
        });
        rule
    }

    /// Drops every rule whose idle time has reached its timeout; returns the
    /// evicted keys in installation order.
    fn expire(&mut self, now: f64) -> Vec<MatchKey> {
        let mut due = Vec::new();
        while let Some(&(Deadline(at), seq)) = self.deadlines.first() {
            if at > now {
                break;
            }
            self.deadlines.pop_first();
            due.push(seq);
        }
        due.sort_unstable();
        due.into_iter()
            .map(|seq| {
                // deadline entry is already gone; remove_seq tolerates that
                self.remove_seq(seq, now, EvictionCause::IdleTimeout).key
            })
            .collect()
    }

    pub fn install_rule(
        &mut self,
        key: MatchKey,
        now: f64,
        idle_timeout: f64,
        origin: Origin,
    ) -> Result<InstallOutcome, FlowTableError> {
        if !(idle_timeout > 0.0 && idle_timeout.is_finite()) {
            return Err(FlowTableError::InvalidIdleTimeout(idle_timeout));
        }
        self.observe(now);
        self.expire(now);
        if self.index.contains_key(&key) {
            return Err(FlowTableError::DuplicateKey(key));
        }
        if self.capacity == 0 {
            return Ok(InstallOutcome::Rejected);
        }
        let mut outcome = InstallOutcome::Installed;
        if self.rules.len() >= self.capacity {
            self.total_overflows += 1;
            let (&oldest, _) = self
                .rules
                .first_key_value()
                .expect("full table is non-empty");
            let victim = self.remove_seq(oldest, now, EvictionCause::FifoReplacement);
            outcome = InstallOutcome::Replaced(victim.key);
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        let rule = FlowRule {
            key,
            install_time: now,
            last_match_time: now,
            packet_count: 0,
            byte_count: 0,
            idle_timeout,
            origin,
        };
        self.deadlines.insert((Deadline(rule.expires_at()), seq));
        self.rules.insert(seq, rule);
        self.index.insert(key, seq);
        self.installed_total += 1;
        Ok(outcome)
    }

    pub fn match_packet(&mut self, key: &MatchKey, bytes: u64, now: f64) -> MatchResult {
        self.observe(now);
        self.expire(now);
        let Some(&seq) = self.index.get(key) else {
            return MatchResult::Miss;
        };
        let rule = self.rules.get_mut(&seq).expect("indexed rule present");
        self.deadlines.remove(&(Deadline(rule.expires_at()), seq));
        rule.packet_count += 1;
        rule.byte_count += bytes;
        rule.last_match_time = now;
        self.deadlines.insert((Deadline(rule.expires_at()), seq));
        MatchResult::Hit
    }

    /// Idle-timeout sweep; returns keys evicted by this call in installation
    /// order.
    pub fn tick(&mut self, now: f64) -> Vec<MatchKey> {
        self.observe(now);
        self.expire(now)
    }

    /// Controller-initiated delete.
    pub fn evict(&mut self, key: &MatchKey, now: f64, cause: EvictionCause) -> Option<MatchKey> {
        self.observe(now);
        self.expire(now);
        let seq = *self.index.get(key)?;
        Some(self.remove_seq(seq, now, cause).key)
    }

    pub fn snapshot(&self, now: f64) -> TableSnapshot {
        let rows = self
            .rules
            .values()
            .map(|r| {
                (
                    RuleStats {
                        key: r.key,
                        duration: r.duration(now),
                        packet_count: r.packet_count,
                        byte_count: r.byte_count,
                    },
                    r.origin,
                )
            })
            .collect();
        TableSnapshot::new(now, self.capacity, rows)
    }
}
