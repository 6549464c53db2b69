use std::hint::black_box;
use std::net::Ipv4Addr;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use flora_core::flora::anomaly::information_gain;
use flora_core::flora::{train_classifier, FEATURE_NAMES};
use flora_core::recon::{anova_oneway, f_cdf};
use flora_core::{BoostConfig, Dataset, FlowTable, MatchKey, Origin, Protocol};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn key(i: u32) -> MatchKey {
    MatchKey {
        src_ip: Ipv4Addr::from(0x0a00_0000 | (i >> 16)),
        dst_ip: Ipv4Addr::new(10, 1, 0, 1),
        src_port: i as u16,
        dst_port: 80,
        protocol: Protocol::Tcp,
        in_port: 1,
    }
}

fn flowtable(c: &mut Criterion) {
    // steady-state FIFO churn in a full table
    c.bench_function("flowtable/install_full_1500", |b| {
        b.iter_batched(
            || {
                let mut t = FlowTable::new(1500);
                for i in 0..1500 {
                    t.install_rule(key(i), 0.0, 20.0, Origin::Legitimate)
                        .unwrap();
                }
                t
            },
            |mut t| {
                for i in 1500..3000 {
                    black_box(t.install_rule(key(i), 1.0, 20.0, Origin::Attack).unwrap());
                }
                t
            },
            BatchSize::LargeInput,
        )
    });
    let mut t = FlowTable::new(1500);
    for i in 0..1500 {
        t.install_rule(key(i), 0.0, 1e9, Origin::Legitimate)
            .unwrap();
    }
    let mut i = 0u32;
    let mut now = 0.0;
    c.bench_function("flowtable/match_hit", |b| {
        b.iter(|| {
            i = (i + 7) % 1500;
            now += 1e-6;
            black_box(t.match_packet(&key(i), 100, now))
        })
    });
}

fn statistics(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let labels: Vec<u8> = (0..4096).map(|_| rng.random_range(0..2)).collect();
    let attr: Vec<u16> = (0..4096).map(|_| rng.random_range(0..32)).collect();
    c.bench_function("information_gain/4096x32", |b| {
        b.iter(|| information_gain(black_box(&labels), black_box(&attr)).unwrap())
    });
    let groups: Vec<Vec<f64>> = (0..2)
        .map(|g| (0..30).map(|_| rng.random::<f64>() + g as f64).collect())
        .collect();
    c.bench_function("anova/2x30", |b| {
        b.iter(|| anova_oneway(black_box(&groups)).unwrap())
    });
    c.bench_function("f_cdf", |b| b.iter(|| f_cdf(black_box(3.7), 1.0, 58.0)));
}

fn dataset(n: usize) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut d = Dataset::new(FEATURE_NAMES.iter().map(|s| s.to_string()).collect());
    for i in 0..n {
        let y = u8::from(rng.random_bool(0.5));
        d.x.push(
            (0..FEATURE_NAMES.len())
                .map(|f| rng.random::<f64>() + if f < 3 { f64::from(y) * 0.6 } else { 0.0 })
                .collect(),
        );
        d.y.push(y);
        d.ids.push(format!("f{i}"));
        d.src_ips.push(Ipv4Addr::new(10, 0, 0, 1));
    }
    d
}

fn classifier(c: &mut Criterion) {
    let d = dataset(5000);
    let cfg = BoostConfig {
        tree_count: 50,
        ..Default::default()
    };
    let mut g = c.benchmark_group("classifier");
    g.sample_size(10);
    g.bench_function("train_5000x12_50trees", |b| {
        b.iter(|| train_classifier(black_box(&d), &cfg).unwrap())
    });
    let model = train_classifier(&d, &cfg).unwrap();
    g.bench_function("predict_5000", |b| {
        b.iter(|| d.x.iter().filter(|r| model.raw(r) >= 0.0).count())
    });
    g.finish();
}

criterion_group!(benches, flowtable, statistics, classifier);
criterion_main!(benches);
