//! Parallel vs sequential evaluation throughput on replicated toy sets.

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use std::hint::black_box;

use steer_core::decode::{SourceTriple, TemplateSet};
use steer_core::eval::{evaluate_items, evaluate_items_seq, ConflictItem, EvalOptions};
use steer_core::logits::SteeringConfig;
use steer_core::toy;

fn replicated_items(copies: usize) -> Vec<ConflictItem> {
    let fixture = toy::build_fixture();
    let mut items = Vec::with_capacity(copies * fixture.items.len());
    for copy in 0..copies {
        for item in &fixture.items {
            let mut cloned = item.clone();
            cloned.id = format!("{}-r{copy}", item.id);
            items.push(cloned);
        }
    }
    items
}

fn bench_eval(c: &mut Criterion) {
    let fixture = toy::build_fixture();
    let sources = SourceTriple::new(&fixture.base, &fixture.pos, &fixture.neg);
    let templates = TemplateSet::default();
    let cfg = SteeringConfig {
        alpha: 1.0,
        ..SteeringConfig::default()
    };
    let opts = EvalOptions::default();

    let mut group = c.benchmark_group("evaluate_items");
    for copies in [4usize, 20] {
        let items = replicated_items(copies);
        group.bench_function(format!("parallel/{}items", items.len()), |b| {
            b.iter_batched(
                || items.clone(),
                |items| {
                    let report = evaluate_items(&sources, &cfg, &templates, &items, &opts).unwrap();
                    black_box(report.sensitivity)
                },
                BatchSize::SmallInput,
            )
        });
        group.bench_function(format!("sequential/{}items", items.len()), |b| {
            b.iter_batched(
                || items.clone(),
                |items| {
                    let report =
                        evaluate_items_seq(&sources, &cfg, &templates, &items, &opts).unwrap();
                    black_box(report.sensitivity)
                },
                BatchSize::SmallInput,
            )
        });
    }
    group.finish();
}

criterion_group!(benches, bench_eval);
criterion_main!(benches);
