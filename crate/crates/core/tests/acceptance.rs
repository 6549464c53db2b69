//! Acceptance runner: one PASS/FAIL line per criterion, nonzero exit on any
//! failure.

mod common;

use std::time::{Duration, Instant};

use flora_core::flora::information_gain;
use flora_core::flora::rfecv::rfecv_select;
use flora_core::harness::{
    build_dataset, evaluate_splits, run_scenario, ExperimentConfig, RunOptions, ScenarioResult,
    SplitEvaluation,
};
use flora_core::recon::{
    anova_oneway, f_cdf, infer_match_fields, run_recon, KeyCrafter, SimProbe, TimeoutSearch,
};
use flora_core::traffic::plan_attack;
use flora_core::{
    BackgroundProfile, BoostConfig, Dataset, FieldSet, MatchField, MatchKey, Protocol, Simulator,
    TopologyConfig,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// criterion 1
const CLOSURE_TOL: f64 = 1e-9;
const CLOSURE_PLANS: usize = 1000;
const C1_BUDGET: Duration = Duration::from_secs(1);
// criterion 2
const RECON_RUNS: u64 = 10;
const RECON_TIMEOUT_WINDOW: (f64, f64) = (19.0, 21.0);
const RECON_TIMEOUT_MIN_OK: usize = 9;
const RECON_REPS: usize = 10;
const C2_BUDGET: Duration = Duration::from_secs(30);
// criterion 3
const FIRST_FULL_WINDOW: (f64, f64) = (65.0, 110.0);
/// Occupancy every second after the first full snapshot, as a fraction of
/// capacity.
const SATURATED_FRACTION: f64 = 0.98;
const C3_BUDGET: Duration = Duration::from_secs(60);
// criterion 4
const MAX_ATTACK_SHARE: f64 = 0.35;
const MAX_OVERFLOWS: u64 = 1;
const UTILIZATION_WINDOW: (f64, f64) = (50.0, 75.0);
const C4_BUDGET: Duration = Duration::from_secs(120);
// criterion 5
const TARGET_ROWS: f64 = 39_950.0;
const ROWS_TOL: f64 = 0.20;
const MIN_ACCURACY: f64 = 0.985;
const MAX_FPR: f64 = 0.005;
const MAX_FNR: f64 = 0.025;
const MIN_F1: f64 = 0.99;
const C5_BUDGET: Duration = Duration::from_secs(600);
// criterion 6
const IG_CASES: usize = 10_000;
const IG_MAX_ROWS: usize = 64;
const IG_TOL: f64 = 1e-9;
const ANOVA_TOL: f64 = 1e-9;
const MC_DRAWS: usize = 1_000_000;
const MC_TOL: f64 = 0.01;
// criterion 7
const RFECV_RUNS: u64 = 10;
const RFECV_MIN_OK: usize = 9;
const RFECV_ROWS: usize = 3000;
const RFECV_NOISE: usize = 3;
const RFECV_FOLDS: usize = 3;
// criterion 8
const TRACES: u64 = 1000;

struct Line {
    id: &'static str,
    name: &'static str,
    pass: bool,
    detail: String,
    elapsed: Duration,
}

fn timed<F: FnOnce() -> (bool, String)>(
    id: &'static str,
    name: &'static str,
    budget: Option<Duration>,
    f: F,
) -> Line {
    let t0 = Instant::now();
    let (mut pass, mut detail) = f();
    let elapsed = t0.elapsed();
    if let Some(b) = budget {
        if elapsed > b {
            pass = false;
            detail.push_str(&format!("; over budget {b:?}"));
        }
    }
    Line {
        id,
        name,
        pass,
        detail,
        elapsed,
    }
}

fn in_window(x: f64, (lo, hi): (f64, f64)) -> bool {
    x >= lo && x <= hi
}

fn c1_equation_closure() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    let mut plans = 0;
    while plans < CLOSURE_PLANS {
        let c = rng.random_range(100..20_000usize);
        let profile = BackgroundProfile {
            transmission_rate_pps: rng.random_range(10.0..4000.0),
            ..BackgroundProfile::default()
        };
        let ports = rng.random_range(1..16usize);
        let idle = rng.random_range(2.0..120.0);
        let lo = rng.random_range(0.1..idle * 0.9);
        let hi = rng.random_range(lo..idle * 0.99);
        let anp = rng.random_range(1..500u32);
        let Ok(p) = plan_attack(c, &profile, ports, (lo, hi), anp, idle) else {
            continue;
        };
        worst = worst.max((p.c_used + p.mri * p.d_total - p.c).abs());
        plans += 1;
    }
    (
        worst <= CLOSURE_TOL,
        format!(
            "{plans} plans, max |c_used + mri*d_total - c| = {worst:.2e} (tol {CLOSURE_TOL:.0e})"
        ),
    )
}

fn random_fields(rng: &mut ChaCha8Rng) -> FieldSet {
    loop {
        let f: FieldSet = MatchField::MUTABLE
            .iter()
            .copied()
            .filter(|_| rng.random_bool(0.6))
            .collect();
        if !f.is_empty() {
            return f;
        }
    }
}

fn c2_recon() -> (bool, String) {
    let mut timeouts_ok = 0;
    let mut fields_ok = 0;
    let mut estimates = Vec::new();
    for seed in 0..RECON_RUNS {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let fields = random_fields(&mut rng);
        let mut cfg = TopologyConfig::paper_default(1500);
        cfg.set_idle_timeout(20.0);
        cfg.set_match_fields(fields);
        cfg.controller.jitter_fraction = 0.05;
        let mut sim = Simulator::new(cfg, seed).expect("topology");
        let h = |n: &str| sim.host_index(n).expect("host");
        let (h1, h2, h4, h6, h7) = (h("h1"), h("h2"), h("h4"), h("h6"), h("h7"));
        let r = match run_recon(&mut sim, h1, h7, RECON_REPS, &TimeoutSearch::default()) {
            Ok(r) => r,
            Err(e) => {
                estimates.push(format!("err({e})"));
                continue;
            }
        };
        match r.t_idle_estimate_s {
            Some(t) if in_window(t, RECON_TIMEOUT_WINDOW) => timeouts_ok += 1,
            _ => {}
        }
        estimates.push(format!("{:?}", r.t_idle_estimate_s));
        // the three probe paths together cross every switch
        let mut all = r.inferred_fields == fields;
        // each path probes its own port block so earlier rules cannot answer
        for (i, (src, dst)) in [(h1, h4), (h6, h2)].into_iter().enumerate() {
            let (ip, prefix) = (sim.hosts()[src].ip, sim.hosts()[dst].prefix);
            let base = MatchKey {
                src_ip: ip,
                dst_ip: prefix.nth(1),
                src_port: 30_000 + 5_000 * i as u16,
                dst_port: 12_000 + 4_000 * i as u16,
                protocol: Protocol::Tcp,
                in_port: 0,
            };
            let mut crafter = KeyCrafter::new(base, prefix);
            let mut probe = SimProbe::new(&mut sim, src);
            all &= infer_match_fields(&mut probe, &mut crafter, &MatchField::MUTABLE, RECON_REPS)
                .is_ok_and(|p| p.inferred_fields == fields);
        }
        if all {
            fields_ok += 1;
        }
    }
    (
        timeouts_ok >= RECON_TIMEOUT_MIN_OK && fields_ok == RECON_RUNS as usize,
        format!(
            "timeout in [{}, {}] s: {timeouts_ok}/{RECON_RUNS} (need {RECON_TIMEOUT_MIN_OK}), estimates {}; fields exact on all paths: {fields_ok}/{RECON_RUNS}",
            RECON_TIMEOUT_WINDOW.0,
            RECON_TIMEOUT_WINDOW.1,
            estimates.join(" ")
        ),
    )
}

fn set1(detector: bool) -> ExperimentConfig {
    let mut e = ExperimentConfig::default().with_set(1);
    e.detector.enabled = detector;
    e
}

fn c3_overflow(r: &ScenarioResult) -> (bool, String) {
    let Some(full) = r.first_full_s else {
        return (false, "table never filled".into());
    };
    let after: Vec<_> = r.occupancy.iter().filter(|o| o.time_s >= full).collect();
    let min_after = after.iter().map(|o| o.total()).min().unwrap_or(0);
    let cap = r.occupancy[0].capacity;
    let saturated = min_after as f64 >= SATURATED_FRACTION * cap as f64;
    (
        in_window(full, FIRST_FULL_WINDOW) && saturated && r.total_overflows >= 1,
        format!(
            "first full at {full} s (window {:?}), min occupancy afterwards {min_after}/{cap} (need >= {:.0}%), overflows {}",
            FIRST_FULL_WINDOW,
            SATURATED_FRACTION * 100.0,
            r.total_overflows
        ),
    )
}

fn c4_defense(r: &ScenarioResult) -> (bool, String) {
    let Some(t) = r.first_detection_s else {
        return (false, "detector never activated".into());
    };
    let share = r.max_attack_share_from(t);
    (
        share <= MAX_ATTACK_SHARE
            && r.total_overflows <= MAX_OVERFLOWS
            && in_window(r.mean_utilization, UTILIZATION_WINDOW),
        format!(
            "first cycle {t} s, max attack share afterwards {:.1}% (<= {}%), overflows {} (<= {MAX_OVERFLOWS}), mean utilization {:.2}% (window {:?}), sources blocked {}/{}",
            100.0 * share,
            100.0 * MAX_ATTACK_SHARE,
            r.total_overflows,
            r.mean_utilization,
            UTILIZATION_WINDOW,
            r.blocked_sources.len(),
            r.attack_sources
        ),
    )
}

fn c5_classifier(e: &SplitEvaluation) -> (bool, String) {
    let rows = e.rows as f64;
    let rows_ok = (rows - TARGET_ROWS).abs() <= ROWS_TOL * TARGET_ROWS;
    let m = e.best_metrics();
    let s = &e.splits[e.best];
    (
        rows_ok && m.accuracy >= MIN_ACCURACY && m.fpr <= MAX_FPR && m.fnr <= MAX_FNR && m.f1 >= MIN_F1,
        format!(
            "rows {} ({} normal / {} attack, target {TARGET_ROWS} +-{:.0}%), best split {}/{}: acc {:.4}% fpr {:.4}% fnr {:.4}% f1 {:.4}%",
            e.rows,
            e.normal_rows,
            e.attack_rows,
            ROWS_TOL * 100.0,
            s.train_pct,
            s.test_pct,
            100.0 * m.accuracy,
            100.0 * m.fpr,
            100.0 * m.fnr,
            100.0 * m.f1
        ),
    )
}

fn c6_kernels() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut ig_fail = 0;
    for _ in 0..IG_CASES {
        let n = rng.random_range(1..=IG_MAX_ROWS);
        let kl = rng.random_range(1..=4u32);
        let ka = rng.random_range(1..=8u32);
        let labels: Vec<u32> = (0..n).map(|_| rng.random_range(0..kl)).collect();
        let attr: Vec<u32> = (0..n).map(|_| rng.random_range(0..ka)).collect();
        let ig = information_gain(&labels, &attr).expect("non-empty");
        let h = common::brute_entropy(&labels);
        let ok = (ig - common::brute_information_gain(&labels, &attr)).abs() <= IG_TOL
            && ig >= 0.0
            && ig <= h + IG_TOL;
        if !ok {
            ig_fail += 1;
        }
    }

    let hand = anova_oneway(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]).expect("anova");
    let th = (13.5f64.sqrt() / 2.0).atan();
    let p_hand = 1.0 - th.sin() * (1.0 + th.cos().powi(2) / 2.0);
    let hand_ok = (hand.f - 13.5).abs() <= ANOVA_TOL && (hand.p_value - p_hand).abs() <= ANOVA_TOL;

    let groups = vec![
        vec![10.2, 11.1, 9.8, 10.5],
        vec![12.0, 12.4, 11.7],
        vec![9.0, 9.9, 10.1, 9.4, 9.6],
    ];
    let base = anova_oneway(&groups).expect("anova");
    let invariant = [(7.0, 1.0), (0.0, 4.0), (-3.0, 0.2)]
        .iter()
        .all(|&(shift, scale)| {
            let g: Vec<Vec<f64>> = groups
                .iter()
                .map(|v| v.iter().map(|x| x * scale + shift).collect())
                .collect();
            let a = anova_oneway(&g).expect("anova");
            (a.f - base.f).abs() <= 1e-6 * base.f && (a.p_value - base.p_value).abs() <= ANOVA_TOL
        });

    let xs = [0.25, 0.6, 1.0, 2.0, 4.0];
    let (d1, d2) = (3usize, 12usize);
    let mc = common::monte_carlo_f_cdf(d1, d2, &xs, MC_DRAWS, 66);
    let mc_err = xs
        .iter()
        .zip(&mc)
        .map(|(x, e)| (f_cdf(*x, d1 as f64, d2 as f64) - e).abs())
        .fold(0.0, f64::max);
    (
        ig_fail == 0 && hand_ok && invariant && mc_err <= MC_TOL,
        format!(
            "entropy/IG {}/{IG_CASES} cases agree; F=13.5 case {}; shift/scale invariance {}; F-CDF vs Monte Carlo max err {mc_err:.4} (tol {MC_TOL})",
            IG_CASES - ig_fail,
            if hand_ok { "ok" } else { "wrong" },
            if invariant { "ok" } else { "broken" },
        ),
    )
}

fn stratified_sample(d: &Dataset, n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let frac = n as f64 / d.len() as f64;
    let mut out = Vec::new();
    for class in [0u8, 1] {
        let mut rows: Vec<usize> = (0..d.len()).filter(|&i| d.y[i] == class).collect();
        rows.shuffle(rng);
        let k = ((rows.len() as f64 * frac).round() as usize).max(2 * RFECV_FOLDS);
        out.extend_from_slice(&rows[..k.min(rows.len())]);
    }
    out.sort_unstable();
    out
}

fn c7_rfecv(d: &Dataset) -> (bool, String) {
    let cfg = BoostConfig {
        tree_count: 40,
        max_depth: 4,
        ..Default::default()
    };
    let mut ok = 0;
    let mut kept = Vec::new();
    for seed in 0..RFECV_RUNS {
        let mut rng = ChaCha8Rng::seed_from_u64(700 + seed);
        let rows = stratified_sample(d, RFECV_ROWS, &mut rng);
        let mut sub = d.subset(&rows);
        for j in 0..RFECV_NOISE {
            let noise: Vec<f64> = (0..sub.len()).map(|_| rng.random()).collect();
            sub.push_column(&format!("noise_{j}"), &noise);
        }
        match rfecv_select(&sub, &cfg, RFECV_FOLDS, 1, seed) {
            Ok(r) => {
                let noisy = r
                    .selected
                    .iter()
                    .filter(|n| n.starts_with("noise_"))
                    .count();
                if noisy == 0 {
                    ok += 1;
                }
                kept.push(r.selected.len());
            }
            Err(_) => kept.push(0),
        }
    }
    (
        ok >= RFECV_MIN_OK,
        format!("noise fully eliminated in {ok}/{RFECV_RUNS} runs (need {RFECV_MIN_OK}); selected subset sizes {kept:?}"),
    )
}

fn c8_table() -> (bool, String) {
    let failures: Vec<String> = (0..TRACES)
        .filter_map(|s| {
            common::flowtable_trace_equivalence(s)
                .err()
                .map(|e| format!("seed {s}: {e}"))
        })
        .collect();
    (
        failures.is_empty(),
        match failures.first() {
            None => format!("{TRACES}/{TRACES} traces identical to the reference"),
            Some(f) => format!("{} mismatches, first {f}", failures.len()),
        },
    )
}

fn main() {
    // libtest arguments such as --nocapture are accepted and ignored
    let mut lines = Vec::new();
    lines.push(timed(
        "1",
        "equation closure",
        Some(C1_BUDGET),
        c1_equation_closure,
    ));
    lines.push(timed(
        "2",
        "reconnaissance accuracy",
        Some(C2_BUDGET),
        c2_recon,
    ));

    let off = set1(false).resolve().expect("config");
    lines.push(timed(
        "3",
        "overflow without defense",
        Some(C3_BUDGET),
        || match run_scenario(&off, &RunOptions::default()) {
            Ok(r) => c3_overflow(&r),
            Err(e) => (false, e.to_string()),
        },
    ));

    let on = set1(true).resolve().expect("config");
    lines.push(timed(
        "4",
        "defense efficacy",
        Some(C4_BUDGET),
        || match run_scenario(&on, &RunOptions::default()) {
            Ok(r) => c4_defense(&r),
            Err(e) => (false, e.to_string()),
        },
    ));

    let exp = ExperimentConfig::default();
    let mut built = None;
    let mut eval = None;
    lines.push(timed("5", "classifier quality", Some(C5_BUDGET), || {
        let b = match build_dataset(&exp) {
            Ok(b) => b,
            Err(e) => return (false, e.to_string()),
        };
        let e = match evaluate_splits(
            &b.dataset,
            &exp.classifier.boost(),
            exp.classifier.split_seed,
        ) {
            Ok(e) => e,
            Err(e) => return (false, e.to_string()),
        };
        let out = c5_classifier(&e);
        built = Some(b);
        eval = Some(e);
        out
    }));

    lines.push(timed("6", "statistical kernels", None, c6_kernels));
    lines.push(timed("7", "RFECV sanity", None, || match &built {
        Some(b) => c7_rfecv(&b.dataset),
        None => (false, "dataset unavailable".into()),
    }));
    lines.push(timed("8", "brute-force table equivalence", None, c8_table));
    lines.push(timed(
        "9",
        "classification rate (reported, no threshold)",
        None,
        || match &eval {
            Some(e) => {
                let rates: Vec<String> = e
                    .splits
                    .iter()
                    .map(|s| {
                        format!(
                            "{}/{}: {:.0}/s",
                            s.train_pct, s.test_pct, s.metrics.classification_rate_per_s
                        )
                    })
                    .collect();
                (
                    e.splits
                        .iter()
                        .all(|s| s.metrics.classification_rate_per_s > 0.0),
                    format!("median of 5 timed passes per split: {}", rates.join(", ")),
                )
            }
            None => (false, "evaluation unavailable".into()),
        },
    ));

    let mut failed = 0;
    for l in &lines {
        let tag = if l.pass { "PASS" } else { "FAIL" };
        if !l.pass {
            failed += 1;
        }
        println!(
            "{tag} criterion {}: {} ({:.2?}) {}",
            l.id, l.name, l.elapsed, l.detail
        );
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        lines.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
