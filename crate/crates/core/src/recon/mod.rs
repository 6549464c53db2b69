//! Attacker reconnaissance over the RTT side channel: which header fields a
//! switch matches on, and how long an idle rule survives.

pub mod anova;

use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

pub use anova::{anova_oneway, f_cdf, f_sf, reg_inc_beta, Anova, AnovaError};

use crate::flowtable::{FieldSet, MatchField, MatchKey, Protocol};
use crate::netsim::{Delivery, PacketEvent, SimError, Simulator};
use crate::Origin;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ReconError {
    #[error("miss/hit indistinguishable: mean T0 {t0:.3} ms vs mean T1 {t1:.3} ms (margin {margin:.3} ms)")]
    Indistinguishable { t0: f64, t1: f64, margin: f64 },
    #[error("candidate field list is empty")]
    NoCandidates,
    #[error("need at least one repetition")]
    NoRepetitions,
    #[error("alpha must lie in (0, 1), got {0}")]
    BadAlpha(f64),
    #[error("probe packet was dropped")]
    Dropped,
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// What the prober can do: send a crafted packet and read its RTT, and let
/// time pass. Whether the packet hit or missed is not observable.
pub trait ProbeChannel {
    fn send(&mut self, key: &MatchKey) -> Result<f64, ReconError>;
    fn wait(&mut self, seconds: f64);
    fn now(&self) -> f64;
}

/// Probe interface onto a simulator, sending from one host.
pub struct SimProbe<'a> {
    sim: &'a mut Simulator,
    src_host: usize,
    bytes: u32,
}

impl<'a> SimProbe<'a> {
    pub fn new(sim: &'a mut Simulator, src_host: usize) -> Self {
        Self {
            sim,
            src_host,
            bytes: 64,
        }
    }
}

impl ProbeChannel for SimProbe<'_> {
    fn send(&mut self, key: &MatchKey) -> Result<f64, ReconError> {
        let ev = PacketEvent {
            time: self.sim.clock(),
            src_host: self.src_host,
            key: *key,
            bytes: self.bytes,
            payload_entropy: 0.0,
            origin: Origin::Attack,
        };
        match self.sim.send_packet(&ev)? {
            Delivery::Delivered(s) => Ok(s.rtt_ms),
            Delivery::Dropped => Err(ReconError::Dropped),
        }
    }

    fn wait(&mut self, seconds: f64) {
        let t = self.sim.clock() + seconds;
        self.sim.advance_to(t);
    }

    fn now(&self) -> f64 {
        self.sim.clock()
    }
}

/// Hands out header values never used before by this prober.
#[derive(Debug, Clone)]
pub struct KeyCrafter {
    base: MatchKey,
    dst_block: (u32, u32),
    counter: u32,
}

impl KeyCrafter {
    /// `dst_prefix` bounds destination rewrites so packets stay routable.
    pub fn new(base: MatchKey, dst_prefix: crate::Ipv4Prefix) -> Self {
        let net = u32::from(dst_prefix.network());
        let size = dst_prefix.size().min(u64::from(u32::MAX)) as u32;
        Self {
            base,
            dst_block: (net, size.max(1)),
            counter: 0,
        }
    }

    fn bump(&mut self) -> u32 {
        self.counter += 1;
        self.counter
    }

    /// Sets `field` of `key` to a value this crafter has not produced before.
    pub fn mutate(&mut self, key: &mut MatchKey, field: MatchField) {
        let c = self.bump();
        match field {
            MatchField::SrcIp => {
                key.src_ip = Ipv4Addr::from(u32::from(self.base.src_ip).wrapping_add(c));
            }
            MatchField::DstIp => {
                let (net, size) = self.dst_block;
                let off = 1 + c % size.saturating_sub(2).max(1);
                key.dst_ip = Ipv4Addr::from(net + off);
            }
            MatchField::SrcPort => key.src_port = self.base.src_port.wrapping_add(c as u16),
            MatchField::DstPort => key.dst_port = self.base.dst_port.wrapping_add(c as u16),
            MatchField::Protocol => {
                key.protocol = match key.protocol {
                    Protocol::Tcp => Protocol::Udp,
                    Protocol::Udp => Protocol::Icmp,
                    Protocol::Icmp => Protocol::Tcp,
                }
            }
            MatchField::InPort => {}
        }
    }

    /// A baseline key fresh in every field listed.
    pub fn fresh(&mut self, fields: impl IntoIterator<Item = MatchField>) -> MatchKey {
        let mut k = self.base;
        for f in fields {
            if f != MatchField::Protocol {
                self.mutate(&mut k, f);
            }
        }
        k
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub inferred_fields: FieldSet,
    pub t0_ms: Vec<f64>,
    pub t1_ms: Vec<f64>,
    pub t2_ms: Vec<(MatchField, Vec<f64>)>,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn var(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Required gap between miss and hit means: three standard errors of the
/// difference, and never less than 5% of the hit RTT.
fn separability_margin(t0: &[f64], t1: &[f64]) -> f64 {
    let se = (var(t0) / t0.len() as f64 + var(t1) / t1.len() as f64).sqrt();
    (3.0 * se).max(0.05 * mean(t1))
}

/// Match-field inference. Each repetition sends a fresh baseline (T0, a
/// miss), repeats it (T1, a hit) and then one copy per candidate field with
/// only that field changed (T2). A field whose T2 mean sits nearer the T0
/// mean than the T1 mean created a new rule, so the switch matches on it.
pub fn infer_match_fields<P: ProbeChannel>(
    probe: &mut P,
    crafter: &mut KeyCrafter,
    candidates: &[MatchField],
    repetitions: usize,
) -> Result<ProbeResult, ReconError> {
    if candidates.is_empty() {
        return Err(ReconError::NoCandidates);
    }
    if repetitions == 0 {
        return Err(ReconError::NoRepetitions);
    }
    let mut t0 = Vec::with_capacity(repetitions);
    let mut t1 = Vec::with_capacity(repetitions);
    let mut t2: Vec<Vec<f64>> = vec![Vec::with_capacity(repetitions); candidates.len()];
    for _ in 0..repetitions {
        let base = crafter.fresh(MatchField::MUTABLE);
        t0.push(probe.send(&base)?);
        t1.push(probe.send(&base)?);
        for (i, &f) in candidates.iter().enumerate() {
            let mut k = base;
            crafter.mutate(&mut k, f);
            t2[i].push(probe.send(&k)?);
        }
    }
    let (m0, m1) = (mean(&t0), mean(&t1));
    let margin = separability_margin(&t0, &t1);
    if !(m0 - m1 > margin) {
        return Err(ReconError::Indistinguishable {
            t0: m0,
            t1: m1,
            margin,
        });
    }
    let mut inferred = FieldSet::empty();
    for (i, &f) in candidates.iter().enumerate() {
        let m2 = mean(&t2[i]);
        if (m2 - m0).abs() < (m2 - m1).abs() {
            inferred.insert(f);
        }
    }
    Ok(ProbeResult {
        inferred_fields: inferred,
        t0_ms: t0,
        t1_ms: t1,
        t2_ms: candidates.iter().copied().zip(t2).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeoutSearch {
    pub alpha: f64,
    /// Probe steps per sweep.
    pub max_iter: usize,
    /// Longest idle interval tried, seconds.
    pub max_int: f64,
    pub repetitions: usize,
}

impl Default for TimeoutSearch {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            max_iter: 50,
            max_int: 60.0,
            repetitions: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeoutEstimate {
    pub t_idle_estimate: Option<f64>,
    pub rtt_series: Vec<(f64, f64)>,
    pub p_value: f64,
    pub alpha: f64,
    pub t0_ms: f64,
    pub t1_ms: f64,
}

/// Idle-timeout estimation. Per repetition a fresh rule is installed (t0)
/// and confirmed (t1), then the same packet is re-sent after idle gaps of
/// 1, 2, 3, ... s; each hit refreshes the rule, the first miss-like RTT
/// marks expiry. Hit RTTs and expiry RTTs are compared by one-way ANOVA and
/// the smallest expiry interval is reported when p <= alpha.
pub fn estimate_idle_timeout<P: ProbeChannel>(
    probe: &mut P,
    crafter: &mut KeyCrafter,
    fields: FieldSet,
    search: &TimeoutSearch,
) -> Result<TimeoutEstimate, ReconError> {
    if !(search.alpha > 0.0 && search.alpha < 1.0) {
        return Err(ReconError::BadAlpha(search.alpha));
    }
    if search.repetitions == 0 {
        return Err(ReconError::NoRepetitions);
    }
    let mut t0s = Vec::new();
    let mut hits = Vec::new();
    let mut expiries = Vec::new();
    let mut expiry_intervals = Vec::new();
    let mut series = Vec::new();
    let mutate: Vec<MatchField> = if fields.is_empty() {
        MatchField::MUTABLE.to_vec()
    } else {
        fields.iter().collect()
    };
    for _ in 0..search.repetitions {
        let key = crafter.fresh(mutate.iter().copied());
        t0s.push(probe.send(&key)?);
        let t1 = probe.send(&key)?;
        hits.push(t1);
        let mut interval = 1.0;
        let mut iter = 0;
        while interval <= search.max_int && iter < search.max_iter {
            probe.wait(interval);
            let t = probe.send(&key)?;
            series.push((interval, t));
            let (m0, m1) = (mean(&t0s), mean(&hits));
            if (t - m0).abs() < (t - m1).abs() {
                expiries.push(t);
                expiry_intervals.push(interval);
                break;
            }
            hits.push(t);
            interval += 1.0;
            iter += 1;
        }
    }
    let (t0_ms, t1_ms) = (mean(&t0s), mean(&hits));
    let p_value = if expiries.is_empty() {
        1.0
    } else {
        match anova_oneway(&[hits.as_slice(), expiries.as_slice()]) {
            Ok(a) => a.p_value,
            Err(_) => 1.0,
        }
    };
    let t_idle_estimate = if p_value <= search.alpha {
        expiry_intervals.iter().copied().reduce(f64::min)
    } else {
        None
    };
    Ok(TimeoutEstimate {
        t_idle_estimate,
        rtt_series: series,
        p_value,
        alpha: search.alpha,
        t0_ms,
        t1_ms,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconReport {
    pub inferred_fields: FieldSet,
    pub t0_ms: f64,
    pub t1_ms: f64,
    pub t_idle_estimate_s: Option<f64>,
    pub p_value: f64,
    pub n: usize,
}

impl ReconReport {
    pub fn new(fields: &ProbeResult, timeout: &TimeoutEstimate, n: usize) -> Self {
        Self {
            inferred_fields: fields.inferred_fields,
            t0_ms: mean(&fields.t0_ms),
            t1_ms: mean(&fields.t1_ms),
            t_idle_estimate_s: timeout.t_idle_estimate,
            p_value: timeout.p_value,
            n,
        }
    }
}

/// Runs both algorithms from `src` towards `dst` on a live simulator.
pub fn run_recon(
    sim: &mut Simulator,
    src: usize,
    dst: usize,
    repetitions: usize,
    search: &TimeoutSearch,
) -> Result<ReconReport, ReconError> {
    let (src_ip, dst_prefix) = {
        let h = sim.hosts();
        (h[src].ip, h[dst].prefix)
    };
    let base = MatchKey {
        src_ip,
        dst_ip: dst_prefix.nth(1),
        src_port: 20_000,
        dst_port: 8_000,
        protocol: Protocol::Tcp,
        in_port: 0,
    };
    let mut crafter = KeyCrafter::new(base, dst_prefix);
    let mut probe = SimProbe::new(sim, src);
    let fields = infer_match_fields(&mut probe, &mut crafter, &MatchField::MUTABLE, repetitions)?;
    let timeout = estimate_idle_timeout(&mut probe, &mut crafter, fields.inferred_fields, search)?;
    Ok(ReconReport::new(&fields, &timeout, repetitions))
}
