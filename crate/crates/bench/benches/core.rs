use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use gravity_bench::{ledger, AllSign};
use gravity_core::ledger::{LedgerMessage, MessageBody, ScoreUpdate};
use gravity_core::reputation::{
    eigentrust, normalize_matrix, uniform_pre_trust, EigenTrustParams, ScoreMatrix, ScoreMode,
};
use gravity_core::sim::{Scenario, Simulation};
use gravity_core::NodeId;
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

fn bench_eigentrust(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for n in [11usize, 50] {
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                (0..n)
                    .map(|_| (rng.next_u32() % 100) as f64 / 10.0)
                    .collect()
            })
            .collect();
        let nodes = (0..n as u32).map(NodeId).collect();
        let s = ScoreMatrix::from_rows(nodes, rows).unwrap();
        let p = uniform_pre_trust(n);
        let params = EigenTrustParams::default();
        c.bench_function(&format!("eigentrust n={n}"), |b| {
            b.iter(|| {
                let m = normalize_matrix(black_box(&s), &p).unwrap();
                eigentrust(&m, &params, &p).unwrap()
            })
        });
    }
}

fn bench_ledger(c: &mut Criterion) {
    c.bench_function("ledger finalize 33 messages, 5 consuls", |b| {
        b.iter_batched(
            || {
                let (mut l, keys) = ledger(11, 5);
                for (i, k) in keys.iter().enumerate() {
                    for j in 0..3 {
                        let body = MessageBody::ScoreUpdate(ScoreUpdate {
                            ratee: NodeId(((i + j + 1) % 11) as u32),
                            value: j as f64,
                            mode: ScoreMode::Automatic,
                        });
                        l.submit(LedgerMessage::new(k, body)).unwrap();
                    }
                }
                (l, keys)
            },
            |(mut l, keys)| {
                l.finalize_block(&AllSign(&keys)).unwrap();
                l
            },
            BatchSize::SmallInput,
        )
    });
}

fn bench_pulse_run(c: &mut Criterion) {
    let text = include_str!("../../../scenarios/baseline.json");
    let mut scenario = Scenario::from_json(text).unwrap();
    scenario.ticks = 20;
    c.bench_function("baseline scenario 20 ticks", |b| {
        b.iter_batched(
            || scenario.clone(),
            |s| Simulation::new(s).unwrap().run(),
            BatchSize::SmallInput,
        )
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = bench_eigentrust, bench_ledger, bench_pulse_run
}
criterion_main!(benches);
