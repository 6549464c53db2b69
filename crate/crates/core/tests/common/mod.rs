//! Independent reference implementations shared by the integration tests
//! and the acceptance runner.
#![allow(dead_code)]

use std::net::Ipv4Addr;

use flora_core::flowtable::{EvictionCause, FlowTable, InstallOutcome, MatchResult};
use flora_core::{MatchKey, Origin, Protocol};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// ---------------------------------------------------------------------------
// flow table reference: a plain vector in installation order, scanned
// linearly on every operation

#[derive(Debug, Clone, PartialEq)]
pub struct RefRule {
    pub key: MatchKey,
    pub install: f64,
    pub last: f64,
    pub packets: u64,
    pub bytes: u64,
    pub idle: f64,
    pub origin: Origin,
}

#[derive(Debug, Default)]
pub struct RefTable {
    pub capacity: usize,
    pub rules: Vec<RefRule>,
    pub overflows: u64,
    /// (time, key, cause)
    pub log: Vec<(f64, MatchKey, EvictionCause)>,
}

impl RefTable {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            ..Default::default()
        }
    }

    fn expire(&mut self, now: f64) -> Vec<MatchKey> {
        let mut gone = Vec::new();
        let mut keep = Vec::new();
        for r in self.rules.drain(..) {
            if now - r.last >= r.idle {
                self.log.push((now, r.key, EvictionCause::IdleTimeout));
                gone.push(r.key);
            } else {
                keep.push(r);
            }
        }
        self.rules = keep;
        gone
    }

    /// None for a duplicate key.
    pub fn install(
        &mut self,
        key: MatchKey,
        now: f64,
        idle: f64,
        origin: Origin,
    ) -> Option<InstallOutcome> {
        self.expire(now);
        if self.rules.iter().any(|r| r.key == key) {
            return None;
        }
        if self.capacity == 0 {
            return Some(InstallOutcome::Rejected);
        }
        let mut out = InstallOutcome::Installed;
        if self.rules.len() == self.capacity {
            let victim = self.rules.remove(0);
            self.overflows += 1;
            self.log
                .push((now, victim.key, EvictionCause::FifoReplacement));
            out = InstallOutcome::Replaced(victim.key);
        }
        self.rules.push(RefRule {
            key,
            install: now,
            last: now,
            packets: 0,
            bytes: 0,
            idle,
            origin,
        });
        Some(out)
    }

    pub fn hit(&mut self, key: &MatchKey, bytes: u64, now: f64) -> MatchResult {
        self.expire(now);
        match self.rules.iter_mut().find(|r| r.key == *key) {
            Some(r) => {
                r.packets += 1;
                r.bytes += bytes;
                r.last = now;
                MatchResult::Hit
            }
            None => MatchResult::Miss,
        }
    }

    pub fn tick(&mut self, now: f64) -> Vec<MatchKey> {
        self.expire(now)
    }

    pub fn evict(&mut self, key: &MatchKey, now: f64) -> Option<MatchKey> {
        self.expire(now);
        let i = self.rules.iter().position(|r| r.key == *key)?;
        let r = self.rules.remove(i);
        self.log.push((now, r.key, EvictionCause::Mitigation));
        Some(r.key)
    }
}

pub fn small_key(n: u16) -> MatchKey {
    MatchKey {
        src_ip: Ipv4Addr::new(10, 0, 0, (n % 7) as u8 + 1),
        dst_ip: Ipv4Addr::new(10, 0, 1, 1),
        src_port: n,
        dst_port: 80,
        protocol: Protocol::Tcp,
        in_port: 1,
    }
}

fn compare(t: &FlowTable, r: &RefTable, step: usize, now: f64) -> Result<(), String> {
    let mine: Vec<_> = t
        .rules()
        .map(|x| {
            (
                x.key,
                x.install_time,
                x.last_match_time,
                x.packet_count,
                x.byte_count,
            )
        })
        .collect();
    let theirs: Vec<_> = r
        .rules
        .iter()
        .map(|x| (x.key, x.install, x.last, x.packets, x.bytes))
        .collect();
    if mine != theirs {
        return Err(format!(
            "step {step} t={now}: rules differ\n{mine:?}\n{theirs:?}"
        ));
    }
    if t.total_overflows() != r.overflows {
        return Err(format!(
            "step {step}: overflows {} vs {}",
            t.total_overflows(),
            r.overflows
        ));
    }
    let log: Vec<_> = t
        .eviction_log()
        .iter()
        .map(|e| (e.time, e.key, e.cause))
        .collect();
    if log != r.log {
        return Err(format!("step {step}: eviction logs differ"));
    }
    let snap = t.snapshot(now);
    for (s, x) in snap.rules().iter().zip(&r.rules) {
        if s.duration != (now - x.install).max(0.0) {
            return Err(format!("step {step}: duration differs"));
        }
    }
    Ok(())
}

/// Drives both tables through one random trace and compares the full state
/// after every operation.
pub fn flowtable_trace_equivalence(seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let capacity = rng.random_range(0..=20usize);
    let events = rng.random_range(1..=500usize);
    let key_space = rng.random_range(1..=40u16);
    let mut t = FlowTable::new(capacity);
    let mut r = RefTable::new(capacity);
    let mut now = 0.0;
    for step in 0..events {
        // half-second grid so expiries land exactly on operation times
        if rng.random_bool(0.6) {
            now += 0.5 * f64::from(rng.random_range(0..4u8));
        }
        let k = small_key(rng.random_range(0..key_space));
        match rng.random_range(0..10u8) {
            0..=3 => {
                let idle = [1.0, 2.0, 3.5, 5.0][rng.random_range(0..4)];
                let origin = if rng.random_bool(0.5) {
                    Origin::Attack
                } else {
                    Origin::Legitimate
                };
                let a = t.install_rule(k, now, idle, origin).ok();
                let b = r.install(k, now, idle, origin);
                if a != b {
                    return Err(format!("step {step}: install {a:?} vs {b:?}"));
                }
            }
            4..=7 => {
                let bytes = rng.random_range(40..1500u64);
                let a = t.match_packet(&k, bytes, now);
                let b = r.hit(&k, bytes, now);
                if a != b {
                    return Err(format!("step {step}: match {a:?} vs {b:?}"));
                }
            }
            8 => {
                let a = t.tick(now);
                let b = r.tick(now);
                if a != b {
                    return Err(format!("step {step}: tick {a:?} vs {b:?}"));
                }
            }
            _ => {
                let a = t.evict(&k, now, EvictionCause::Mitigation);
                let b = r.evict(&k, now);
                if a != b {
                    return Err(format!("step {step}: evict {a:?} vs {b:?}"));
                }
            }
        }
        compare(&t, &r, step, now)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// information gain by direct counting over sorted distinct values

fn entropy_nat_of(counts: &[usize]) -> f64 {
    let n: usize = counts.iter().sum();
    let mut h = 0.0;
    for &c in counts {
        if c > 0 {
            let p = c as f64 / n as f64;
            h -= p * p.ln();
        }
    }
    h / std::f64::consts::LN_2
}

pub fn brute_entropy(labels: &[u32]) -> f64 {
    let mut distinct: Vec<u32> = labels.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    let counts: Vec<usize> = distinct
        .iter()
        .map(|d| labels.iter().filter(|l| *l == d).count())
        .collect();
    entropy_nat_of(&counts)
}

pub fn brute_information_gain(labels: &[u32], attr: &[u32]) -> f64 {
    let n = labels.len() as f64;
    let mut values: Vec<u32> = attr.to_vec();
    values.sort_unstable();
    values.dedup();
    let mut cond = 0.0;
    for v in values {
        let part: Vec<u32> = labels
            .iter()
            .zip(attr)
            .filter(|(_, a)| **a == v)
            .map(|(l, _)| *l)
            .collect();
        cond += part.len() as f64 / n * brute_entropy(&part);
    }
    brute_entropy(labels) - cond
}

// ---------------------------------------------------------------------------
// Monte Carlo F distribution

/// Empirical CDF of F(d1, d2) at each `x`, from `draws` ratio-of-chi-square
/// samples built from standard normals.
pub fn monte_carlo_f_cdf(d1: usize, d2: usize, xs: &[f64], draws: usize, seed: u64) -> Vec<f64> {
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut below = vec![0usize; xs.len()];
    let chi = |k: usize, rng: &mut ChaCha8Rng| -> f64 {
        (0..k)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                z * z
            })
            .sum()
    };
    for _ in 0..draws {
        let a = chi(d1, &mut rng) / d1 as f64;
        let b = chi(d2, &mut rng) / d2 as f64;
        let f = a / b;
        for (i, x) in xs.iter().enumerate() {
            if f <= *x {
                below[i] += 1;
            }
        }
    }
    below.iter().map(|&b| b as f64 / draws as f64).collect()
}
