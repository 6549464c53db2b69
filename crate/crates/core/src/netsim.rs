//! Discrete-time SDN data plane: hosts, switches that each own a
//! [`FlowTable`], and one controller handling the Packet-In / Flow-Mod miss
//! path.
//!
//! The engine is driven by externally registered, time-sorted traffic sources
//! and a 1 s clock. At every whole second all tables are swept for idle
//! timeouts and a snapshot is taken, before any packet carrying the same
//! timestamp is processed.

use std::collections::{HashMap, HashSet, VecDeque};
use std::net::Ipv4Addr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::addr::Ipv4Prefix;
use crate::flowtable::{
    format_time, EvictionCause, FieldSet, FlowTable, MatchKey, MatchResult, Origin, TableSnapshot,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HostRole {
    Legitimate,
    Attacker,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwitchConfig {
    pub name: String,
    pub capacity: usize,
    #[serde(default = "FieldSet::five_tuple")]
    pub match_fields: FieldSet,
    #[serde(default = "default_idle_timeout")]
    pub idle_timeout: f64,
}

fn default_idle_timeout() -> f64 {
    20.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HostConfig {
    pub name: String,
    pub switch: String,
    pub port: u16,
    pub role: HostRole,
    /// Address block owned by the host (the site behind this access port).
    pub prefix: Ipv4Prefix,
    /// The host's own address; defaults to the first address of `prefix`.
    #[serde(default)]
    pub ip: Option<Ipv4Addr>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkConfig {
    pub a: String,
    pub b: String,
    pub latency_ms: f64,
    #[serde(default = "default_switch_bw")]
    pub bandwidth_gbps: f64,
}

fn default_switch_bw() -> f64 {
    1.0
}

fn default_host_bw() -> f64 {
    5.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerConfig {
    /// Extra round-trip time of a table miss.
    pub penalty_ms: f64,
    /// RTT noise standard deviation as a fraction of the path base RTT.
    pub jitter_fraction: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            penalty_ms: 50.0,
            jitter_fraction: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyConfig {
    pub switches: Vec<SwitchConfig>,
    pub hosts: Vec<HostConfig>,
    /// Switch-to-switch links.
    pub links: Vec<LinkConfig>,
    pub host_link_latency_ms: f64,
    /// Recorded for completeness; the latency-only model never uses it.
    #[serde(default = "default_host_bw")]
    pub host_link_bandwidth_gbps: f64,
    #[serde(default)]
    pub controller: ControllerConfig,
}

impl TopologyConfig {
    /// Tree used in the experiments: root s1 with leaves s2..s4, eight hosts
    /// of which h1, h3 and h6 attack. Host hN owns 10.0.N.0/24.
    pub fn paper_default(capacity: usize) -> Self {
        let switch = |name: &str| SwitchConfig {
            name: name.to_string(),
            capacity,
            match_fields: FieldSet::five_tuple(),
            idle_timeout: 20.0,
        };
        let attach = [
            ("h1", "s2", 1),
            ("h2", "s2", 2),
            ("h3", "s2", 3),
            ("h4", "s3", 1),
            ("h5", "s3", 2),
            ("h6", "s3", 3),
            ("h7", "s4", 1),
            ("h8", "s4", 2),
        ];
        let hosts = attach
            .iter()
            .enumerate()
            .map(|(i, (name, sw, port))| HostConfig {
                name: name.to_string(),
                switch: sw.to_string(),
                port: *port,
                role: if matches!(*name, "h1" | "h3" | "h6") {
                    HostRole::Attacker
                } else {
                    HostRole::Legitimate
                },
                prefix: Ipv4Prefix::new(Ipv4Addr::new(10, 0, i as u8 + 1, 0), 24)
                    .expect("valid prefix"),
                ip: None,
            })
            .collect();
        let link = |a: &str, b: &str| LinkConfig {
            a: a.to_string(),
            b: b.to_string(),
            latency_ms: 2.0,
            bandwidth_gbps: 1.0,
        };
        Self {
            switches: ["s1", "s2", "s3", "s4"].iter().map(|s| switch(s)).collect(),
            hosts,
            links: vec![link("s1", "s2"), link("s1", "s3"), link("s1", "s4")],
            host_link_latency_ms: 1.0,
            host_link_bandwidth_gbps: 5.0,
            controller: ControllerConfig::default(),
        }
    }

    pub fn set_capacity(&mut self, capacity: usize) {
        for s in &mut self.switches {
            s.capacity = capacity;
        }
    }

    pub fn set_idle_timeout(&mut self, idle_timeout: f64) {
        for s in &mut self.switches {
            s.idle_timeout = idle_timeout;
        }
    }

    pub fn set_match_fields(&mut self, fields: FieldSet) {
        for s in &mut self.switches {
            s.match_fields = fields;
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("topology has no switches")]
    NoSwitches,
    #[error("duplicate name `{0}`")]
    DuplicateName(String),
    #[error("unknown switch `{0}`")]
    UnknownSwitch(String),
    #[error("port {port} on switch `{switch}` is used twice")]
    DuplicatePort { switch: String, port: u16 },
    #[error("topology is not connected")]
    Disconnected,
    #[error("invalid value for {what}: {value}")]
    InvalidValue { what: String, value: f64 },
    #[error("host `{0}` address lies outside its prefix")]
    HostOutsidePrefix(String),
    #[error("prefixes of hosts `{0}` and `{1}` overlap")]
    OverlappingPrefixes(String, String),
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SimError {
    #[error("no host owns destination {0}")]
    UnknownDestination(Ipv4Addr),
    #[error("unknown source host index {0}")]
    UnknownSource(usize),
    #[error("event at t={event} precedes the simulator clock t={clock}")]
    TimeTravel { event: f64, clock: f64 },
    #[error("event must carry a positive size and a non-negative time")]
    InvalidEvent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PacketEvent {
    pub time: f64,
    pub src_host: usize,
    pub key: MatchKey,
    pub bytes: u32,
    /// Shannon entropy of the synthetic payload, bits per byte.
    pub payload_entropy: f64,
    /// Ground truth; only carried into installed rules for labelling.
    pub origin: Origin,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RttSample {
    pub rtt_ms: f64,
    pub send_time: f64,
    /// Ground truth for test oracles. Probing code only sees `rtt_ms`.
    pub truth_miss: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Delivery {
    Delivered(RttSample),
    /// Source address is blocked at ingress; no table was touched.
    Dropped,
}

impl Delivery {
    pub fn sample(&self) -> Option<RttSample> {
        match self {
            Delivery::Delivered(s) => Some(*s),
            Delivery::Dropped => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PacketOutcome {
    Hit,
    Miss,
    Dropped,
}

impl PacketOutcome {
    pub fn as_str(&self) -> &'static str {
        match self {
            PacketOutcome::Hit => "hit",
            PacketOutcome::Miss => "miss",
            PacketOutcome::Dropped => "dropped",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub time: f64,
    pub host: String,
    pub key: MatchKey,
    pub bytes: u32,
    pub outcome: PacketOutcome,
    pub rtt_ms: Option<f64>,
}

pub const TRACE_CSV_HEADER: [&str; 10] = [
    "time_s",
    "host",
    "src_ip",
    "dst_ip",
    "sport",
    "dport",
    "proto",
    "bytes",
    "hit_or_miss",
    "rtt_ms",
];

impl TraceRecord {
    pub fn csv_fields(&self) -> [String; 10] {
        [
            format_time(self.time),
            self.host.clone(),
            self.key.src_ip.to_string(),
            self.key.dst_ip.to_string(),
            self.key.src_port.to_string(),
            self.key.dst_port.to_string(),
            self.key.protocol.to_string(),
            self.bytes.to_string(),
            self.outcome.as_str().to_string(),
            self.rtt_ms.map(|r| format!("{r:.6}")).unwrap_or_default(),
        ]
    }
}

pub fn write_trace_csv<W: std::io::Write>(w: W, trace: &[TraceRecord]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(TRACE_CSV_HEADER)?;
    for r in trace {
        w.write_record(r.csv_fields())?;
    }
    w.flush()?;
    Ok(())
}

/// Packet metadata a switch keeps per live rule for the detector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Arrival {
    pub time: f64,
    pub bytes: u32,
    pub payload_entropy: f64,
    /// Port the packet entered the switch on.
    pub in_port: u16,
}

/// Snapshots of every switch at one whole second.
#[derive(Debug, Clone)]
pub struct SecondSnapshot {
    pub time: f64,
    pub tables: Vec<TableSnapshot>,
}

#[derive(Debug, Clone, Default)]
pub struct RunOutput {
    pub trace: Vec<TraceRecord>,
    pub snapshots: Vec<SecondSnapshot>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct SimCounters {
    pub hits: u64,
    pub misses: u64,
    pub dropped: u64,
    pub install_attempts: u64,
}

#[derive(Debug, Clone, Copy)]
struct Hop {
    switch: usize,
    in_port: u16,
}

#[derive(Debug, Clone)]
struct Route {
    hops: Vec<Hop>,
    one_way_ms: f64,
}

#[derive(Debug, Clone)]
pub struct Host {
    pub name: String,
    pub switch: usize,
    pub port: u16,
    pub role: HostRole,
    pub prefix: Ipv4Prefix,
    pub ip: Ipv4Addr,
}

/// A host as seen by traffic generators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Endpoint {
    pub host: usize,
    pub switch: usize,
    pub ip: Ipv4Addr,
    pub prefix: Ipv4Prefix,
}

#[derive(Debug)]
struct Switch {
    name: String,
    table: FlowTable,
    fields: FieldSet,
    idle_timeout: f64,
    /// neighbour switch index -> local port
    ports: HashMap<usize, u16>,
    /// local port -> prefixes reachable behind it
    port_prefixes: HashMap<u16, Vec<Ipv4Prefix>>,
    arrivals: HashMap<MatchKey, Vec<Arrival>>,
    log_cursor: usize,
}

impl Switch {
    /// Drops arrival logs of rules evicted since the last call.
    fn sync_arrivals(&mut self) {
        let log = self.table.eviction_log();
        for ev in &log[self.log_cursor..] {
            self.arrivals.remove(&ev.key);
        }
        self.log_cursor = log.len();
    }
}

struct Source {
    events: VecDeque<PacketEvent>,
}

pub struct Simulator {
    config: TopologyConfig,
    switches: Vec<Switch>,
    hosts: Vec<Host>,
    /// switch adjacency: (neighbour, latency)
    adjacency: Vec<Vec<(usize, f64)>>,
    routes: HashMap<(usize, usize), Route>,
    blocked: HashSet<Ipv4Addr>,
    sources: Vec<Source>,
    clock: f64,
    next_tick: u64,
    rng: ChaCha8Rng,
    counters: SimCounters,
    record_trace: bool,
}

impl std::fmt::Debug for Simulator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Simulator")
            .field("clock", &self.clock)
            .field("switches", &self.switches.len())
            .field("hosts", &self.hosts.len())
            .finish()
    }
}

fn positive(what: &str, value: f64) -> Result<(), ConfigError> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(ConfigError::InvalidValue {
            what: what.to_string(),
            value,
        })
    }
}

impl Simulator {
    pub fn new(config: TopologyConfig, seed: u64) -> Result<Self, ConfigError> {
        if config.switches.is_empty() {
            return Err(ConfigError::NoSwitches);
        }
        let mut names = HashSet::new();
        let mut switch_index = HashMap::new();
        for (i, s) in config.switches.iter().enumerate() {
            if !names.insert(s.name.clone()) {
                return Err(ConfigError::DuplicateName(s.name.clone()));
            }
            positive("idle_timeout", s.idle_timeout)?;
            switch_index.insert(s.name.clone(), i);
        }
        positive("host_link_latency_ms", config.host_link_latency_ms)?;
        let c = &config.controller;
        if !(c.penalty_ms >= 0.0 && c.penalty_ms.is_finite()) {
            return Err(ConfigError::InvalidValue {
                what: "penalty_ms".into(),
                value: c.penalty_ms,
            });
        }
        if !(c.jitter_fraction >= 0.0 && c.jitter_fraction.is_finite()) {
            return Err(ConfigError::InvalidValue {
                what: "jitter_fraction".into(),
                value: c.jitter_fraction,
            });
        }

        let n = config.switches.len();
        let mut used_ports: Vec<HashSet<u16>> = vec![HashSet::new(); n];
        let mut hosts = Vec::new();
        for h in &config.hosts {
            if !names.insert(h.name.clone()) {
                return Err(ConfigError::DuplicateName(h.name.clone()));
            }
            let sw = *switch_index
                .get(&h.switch)
                .ok_or_else(|| ConfigError::UnknownSwitch(h.switch.clone()))?;
            if !used_ports[sw].insert(h.port) {
                return Err(ConfigError::DuplicatePort {
                    switch: h.switch.clone(),
                    port: h.port,
                });
            }
            let ip = h.ip.unwrap_or_else(|| h.prefix.nth(1));
            if !h.prefix.contains(ip) {
                return Err(ConfigError::HostOutsidePrefix(h.name.clone()));
            }
            hosts.push(Host {
                name: h.name.clone(),
                switch: sw,
                port: h.port,
                role: h.role,
                prefix: h.prefix,
                ip,
            });
        }
        for (i, a) in hosts.iter().enumerate() {
            for b in &hosts[i + 1..] {
                if a.prefix.contains(b.prefix.network()) || b.prefix.contains(a.prefix.network()) {
                    return Err(ConfigError::OverlappingPrefixes(
                        a.name.clone(),
                        b.name.clone(),
                    ));
                }
            }
        }

        let mut adjacency = vec![Vec::new(); n];
        let mut link_ports: Vec<HashMap<usize, u16>> = vec![HashMap::new(); n];
        for l in &config.links {
            let a = *switch_index
                .get(&l.a)
                .ok_or_else(|| ConfigError::UnknownSwitch(l.a.clone()))?;
            let b = *switch_index
                .get(&l.b)
                .ok_or_else(|| ConfigError::UnknownSwitch(l.b.clone()))?;
            positive("link latency_ms", l.latency_ms)?;
            adjacency[a].push((b, l.latency_ms));
            adjacency[b].push((a, l.latency_ms));
            for (x, y) in [(a, b), (b, a)] {
                let port = (1..=u16::MAX)
                    .find(|p| !used_ports[x].contains(p))
                    .expect("free port");
                used_ports[x].insert(port);
                link_ports[x].insert(y, port);
            }
        }
        // connectivity over switches (hosts hang off switches)
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(s) = stack.pop() {
            for &(t, _) in &adjacency[s] {
                if !seen[t] {
                    seen[t] = true;
                    stack.push(t);
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(ConfigError::Disconnected);
        }

        let switches = config
            .switches
            .iter()
            .enumerate()
            .map(|(i, s)| Switch {
                name: s.name.clone(),
                table: FlowTable::new(s.capacity),
                fields: s.match_fields,
                idle_timeout: s.idle_timeout,
                ports: link_ports[i].clone(),
                port_prefixes: HashMap::new(),
                arrivals: HashMap::new(),
                log_cursor: 0,
            })
            .collect();

        let mut sim = Self {
            config,
            switches,
            hosts,
            adjacency,
            routes: HashMap::new(),
            blocked: HashSet::new(),
            sources: Vec::new(),
            clock: 0.0,
            next_tick: 1,
            rng: ChaCha8Rng::seed_from_u64(seed),
            counters: SimCounters::default(),
            record_trace: true,
        };
        sim.build_port_prefixes();
        Ok(sim)
    }

    /// For every switch port, the host prefixes whose traffic legitimately
    /// enters through it (the ingress-filtering allocation list).
    fn build_port_prefixes(&mut self) {
        for s in 0..self.switches.len() {
            let mut map: HashMap<u16, Vec<Ipv4Prefix>> = HashMap::new();
            for h in 0..self.hosts.len() {
                let host = &self.hosts[h];
                let port = if host.switch == s {
                    host.port
                } else {
                    let path = self.switch_path(host.switch, s);
                    let prev = path[path.len() - 2];
                    self.switches[s].ports[&prev]
                };
                map.entry(port).or_default().push(host.prefix);
            }
            // ports with no host behind them still exist for filtering
            for &p in self.switches[s].ports.values() {
                map.entry(p).or_default();
            }
            self.switches[s].port_prefixes = map;
        }
    }

    /// Shortest path between switches (fewest hops, then lowest latency),
    /// lowest switch index first on ties.
    fn switch_path(&self, from: usize, to: usize) -> Vec<usize> {
        let n = self.switches.len();
        let mut best: Vec<Option<(usize, f64)>> = vec![None; n];
        let mut prev = vec![usize::MAX; n];
        best[from] = Some((0, 0.0));
        let mut frontier = vec![from];
        while !frontier.is_empty() {
            let mut next = Vec::new();
            frontier.sort_unstable();
            for &s in &frontier {
                let (hops, lat) = best[s].expect("visited");
                let mut neigh = self.adjacency[s].clone();
                neigh.sort_by_key(|(t, _)| *t);
                for (t, l) in neigh {
                    let cand = (hops + 1, lat + l);
                    let better = match best[t] {
                        None => true,
                        Some((h, bl)) => cand.0 == h && cand.1 < bl - 1e-12,
                    };
                    if better {
                        if best[t].is_none() {
                            next.push(t);
                        }
                        best[t] = Some(cand);
                        prev[t] = s;
                    }
                }
            }
            frontier = next;
        }
        let mut path = vec![to];
        let mut cur = to;
        while cur != from {
            cur = prev[cur];
            path.push(cur);
        }
        path.reverse();
        path
    }

    fn route(&mut self, src: usize, dst: usize) -> &Route {
        if !self.routes.contains_key(&(src, dst)) {
            let (s, d) = (&self.hosts[src], &self.hosts[dst]);
            let path = self.switch_path(s.switch, d.switch);
            let mut hops = Vec::with_capacity(path.len());
            let mut one_way = 2.0 * self.config.host_link_latency_ms;
            for (i, &sw) in path.iter().enumerate() {
                let in_port = if i == 0 {
                    s.port
                } else {
                    self.switches[sw].ports[&path[i - 1]]
                };
                if i > 0 {
                    let lat = self.adjacency[path[i - 1]]
                        .iter()
                        .find(|(t, _)| *t == sw)
                        .map(|(_, l)| *l)
                        .expect("adjacent");
                    one_way += lat;
                }
                hops.push(Hop {
                    switch: sw,
                    in_port,
                });
            }
            self.routes.insert(
                (src, dst),
                Route {
                    hops,
                    one_way_ms: one_way,
                },
            );
        }
        &self.routes[&(src, dst)]
    }

    pub fn config(&self) -> &TopologyConfig {
        &self.config
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn counters(&self) -> SimCounters {
        self.counters
    }

    pub fn hosts(&self) -> &[Host] {
        &self.hosts
    }

    pub fn host_index(&self, name: &str) -> Option<usize> {
        self.hosts.iter().position(|h| h.name == name)
    }

    pub fn switch_index(&self, name: &str) -> Option<usize> {
        self.switches.iter().position(|s| s.name == name)
    }

    pub fn switch_count(&self) -> usize {
        self.switches.len()
    }

    pub fn switch_name(&self, idx: usize) -> &str {
        &self.switches[idx].name
    }

    pub fn switch_fields(&self, idx: usize) -> FieldSet {
        self.switches[idx].fields
    }

    pub fn table(&self, switch: usize) -> &FlowTable {
        &self.switches[switch].table
    }

    pub fn arrivals(&self, switch: usize) -> &HashMap<MatchKey, Vec<Arrival>> {
        &self.switches[switch].arrivals
    }

    /// Ingress-filtering allocation list of a switch: port -> prefixes.
    pub fn port_prefixes(&self, switch: usize) -> &HashMap<u16, Vec<Ipv4Prefix>> {
        &self.switches[switch].port_prefixes
    }

    pub fn endpoints(&self, role: Option<HostRole>) -> Vec<Endpoint> {
        self.hosts
            .iter()
            .enumerate()
            .filter(|(_, h)| role.is_none_or(|r| h.role == r))
            .map(|(i, h)| Endpoint {
                host: i,
                switch: h.switch,
                ip: h.ip,
                prefix: h.prefix,
            })
            .collect()
    }

    /// Switches traversed between two hosts, in order.
    pub fn path_switches(&mut self, src: usize, dst: usize) -> Vec<usize> {
        self.route(src, dst).hops.iter().map(|h| h.switch).collect()
    }

    pub fn set_record_trace(&mut self, on: bool) {
        self.record_trace = on;
    }

    pub fn block_source(&mut self, ip: Ipv4Addr) {
        self.blocked.insert(ip);
    }

    pub fn is_blocked(&self, ip: Ipv4Addr) -> bool {
        self.blocked.contains(&ip)
    }

    /// Removes the rule whose key (before masking/ingress-port rewrite) is
    /// `key` from every switch holding it. Returns how many tables dropped it.
    pub fn evict_everywhere(&mut self, key: &MatchKey, cause: EvictionCause) -> usize {
        let now = self.clock;
        let mut n = 0;
        for sw in &mut self.switches {
            let candidates: Vec<MatchKey> = if sw.fields.contains(crate::MatchField::InPort) {
                sw.port_prefixes
                    .keys()
                    .map(|p| key.with_in_port(*p).masked(sw.fields))
                    .collect()
            } else {
                vec![key.masked(sw.fields)]
            };
            for k in candidates {
                if sw.table.evict(&k, now, cause).is_some() {
                    n += 1;
                }
            }
            sw.sync_arrivals();
        }
        n
    }

    /// Evicts from a single switch by its stored key.
    pub fn evict_rule(&mut self, switch: usize, key: &MatchKey, cause: EvictionCause) -> bool {
        let now = self.clock;
        let sw = &mut self.switches[switch];
        let hit = sw.table.evict(key, now, cause).is_some();
        sw.sync_arrivals();
        hit
    }

    fn destination(&self, ip: Ipv4Addr) -> Result<usize, SimError> {
        self.hosts
            .iter()
            .position(|h| h.prefix.contains(ip))
            .ok_or(SimError::UnknownDestination(ip))
    }

    fn tick_all(&mut self, now: f64) {
        for sw in &mut self.switches {
            sw.table.tick(now);
            sw.sync_arrivals();
        }
    }

    fn snapshot_all(&self, now: f64) -> SecondSnapshot {
        SecondSnapshot {
            time: now,
            tables: self
                .switches
                .iter()
                .map(|s| s.table.snapshot(now))
                .collect(),
        }
    }

    /// Moves the clock forward, running the whole-second sweeps on the way.
    pub fn advance_to(&mut self, t: f64) {
        while (self.next_tick as f64) <= t {
            let now = self.next_tick as f64;
            self.tick_all(now);
            self.next_tick += 1;
        }
        if t > self.clock {
            self.clock = t;
        }
    }

    fn jitter(&mut self, base_rtt: f64) -> f64 {
        let sigma = self.config.controller.jitter_fraction * base_rtt;
        if sigma <= 0.0 {
            return 0.0;
        }
        let normal = Normal::new(0.0, sigma).expect("positive sigma");
        loop {
            let x: f64 = normal.sample(&mut self.rng);
            if x.abs() <= 3.0 * sigma {
                return x;
            }
        }
    }

    /// Delivers one packet: matches it along its path, runs the controller
    /// miss path when any switch lacks a rule, and returns the RTT sample.
    pub fn send_packet(&mut self, ev: &PacketEvent) -> Result<Delivery, SimError> {
        if !(ev.time >= 0.0 && ev.time.is_finite()) || ev.bytes == 0 {
            return Err(SimError::InvalidEvent);
        }
        if ev.time + 1e-9 < self.clock {
            return Err(SimError::TimeTravel {
                event: ev.time,
                clock: self.clock,
            });
        }
        if ev.src_host >= self.hosts.len() {
            return Err(SimError::UnknownSource(ev.src_host));
        }
        let dst = self.destination(ev.key.dst_ip)?;
        self.advance_to(ev.time);
        let now = self.clock;
        if self.blocked.contains(&ev.key.src_ip) {
            self.counters.dropped += 1;
            return Ok(Delivery::Dropped);
        }
        let route = self.route(ev.src_host, dst).clone();
        let bytes = u64::from(ev.bytes);
        let arrival = Arrival {
            time: now,
            bytes: ev.bytes,
            payload_entropy: ev.payload_entropy,
            in_port: 0,
        };

        let mut missing = Vec::new();
        for hop in &route.hops {
            let arrival = Arrival {
                in_port: hop.in_port,
                ..arrival
            };
            let sw = &mut self.switches[hop.switch];
            let key = ev.key.with_in_port(hop.in_port).masked(sw.fields);
            match sw.table.match_packet(&key, bytes, now) {
                MatchResult::Hit => {
                    sw.arrivals.entry(key).or_default().push(arrival);
                }
                MatchResult::Miss => missing.push((hop.switch, key, arrival)),
            }
            sw.sync_arrivals();
        }
        let miss = !missing.is_empty();
        // Packet-In -> Flow-Mod on each switch lacking the rule, then the
        // packet is re-injected through the fresh entry.
        for (s, key, arrival) in missing {
            let sw = &mut self.switches[s];
            self.counters.install_attempts += 1;
            let outcome = sw
                .table
                .install_rule(key, now, sw.idle_timeout, ev.origin)
                .expect("miss implies key absent and timeout validated");
            if !matches!(outcome, crate::InstallOutcome::Rejected) {
                sw.table.match_packet(&key, bytes, now);
                sw.arrivals.insert(key, vec![arrival]);
            }
            sw.sync_arrivals();
        }

        let base = 2.0 * route.one_way_ms;
        let penalty = if miss {
            self.config.controller.penalty_ms
        } else {
            0.0
        };
        let rtt = base + penalty + self.jitter(base);
        if miss {
            self.counters.misses += 1;
        } else {
            self.counters.hits += 1;
        }
        Ok(Delivery::Delivered(RttSample {
            rtt_ms: rtt,
            send_time: now,
            truth_miss: miss,
        }))
    }

    /// Registers a traffic source. Events are sorted by time (stable), so
    /// equal timestamps keep generation order.
    pub fn add_source(&mut self, mut events: Vec<PacketEvent>) -> usize {
        events.sort_by(|a, b| a.time.total_cmp(&b.time));
        self.sources.push(Source {
            events: events.into(),
        });
        self.sources.len() - 1
    }

    fn next_source(&self) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for (i, s) in self.sources.iter().enumerate() {
            if let Some(ev) = s.events.front() {
                if best.is_none_or(|(_, t)| ev.time < t) {
                    best = Some((i, ev.time));
                }
            }
        }
        best
    }

    /// Processes every queued event with time < `t_end`, sweeping and
    /// snapshotting all tables at each whole second in `(clock, t_end]`.
    pub fn run_until(&mut self, t_end: f64) -> Result<RunOutput, SimError> {
        let mut out = RunOutput::default();
        if t_end < self.clock {
            return Ok(out);
        }
        loop {
            let boundary = self.next_tick as f64;
            let next = self.next_source();
            if boundary <= t_end && next.is_none_or(|(_, t)| boundary <= t) {
                self.tick_all(boundary);
                self.clock = boundary;
                self.next_tick += 1;
                out.snapshots.push(self.snapshot_all(boundary));
                continue;
            }
            match next {
                Some((i, t)) if t < t_end => {
                    let ev = self.sources[i].events.pop_front().expect("peeked");
                    let delivery = self.send_packet(&ev)?;
                    if self.record_trace {
                        let (outcome, rtt) = match delivery {
                            Delivery::Dropped => (PacketOutcome::Dropped, None),
                            Delivery::Delivered(s) if s.truth_miss => {
                                (PacketOutcome::Miss, Some(s.rtt_ms))
                            }
                            Delivery::Delivered(s) => (PacketOutcome::Hit, Some(s.rtt_ms)),
                        };
                        out.trace.push(TraceRecord {
                            time: ev.time,
                            host: self.hosts[ev.src_host].name.clone(),
                            key: ev.key,
                            bytes: ev.bytes,
                            outcome,
                            rtt_ms: rtt,
                        });
                    }
                }
                _ => break,
            }
        }
        if t_end > self.clock {
            self.clock = t_end;
        }
        Ok(out)
    }

    /// Draws a uniformly random value in [0, 1) from the jitter stream. Used
    /// only by tests that need a shared deterministic generator.
    #[doc(hidden)]
    pub fn rng_probe(&mut self) -> f64 {
        self.rng.random()
    }
}
