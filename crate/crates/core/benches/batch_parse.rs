//! Batch-simulation benchmark: sequential walk vs the rayon fan-out, plus
//! the sequential reference parser for scale.
//!
//! Run with `cargo bench -p parsepipe`. Disabling the `parallel` feature
//! drops the rayon arm and benches the fallback alone.

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use std::hint::black_box;

use parsepipe::plan::plan;
use parsepipe::reference::reference_parse;
use parsepipe::sim::{simulate_batch, simulate_batch_sequential, PacketSimulator};
use parsepipe::traffic;
use parsepipe::ParserGraph;

fn corpus(graph: &ParserGraph, count: usize) -> Vec<Vec<u8>> {
    traffic::generate(graph, count, traffic::DEFAULT_SEED)
        .into_iter()
        .map(|p| p.bytes)
        .collect()
}

fn bench_batch(c: &mut Criterion) {
    let path =
        std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/l4_parser.json");
    let graph = ParserGraph::load_file(path).unwrap();
    let plan = plan(&graph).unwrap();
    let sim = PacketSimulator::new(&graph, &plan).unwrap();
    let packets = corpus(&graph, 2000);

    let mut group = c.benchmark_group("batch_parse_2000");
    group.bench_function("pipeline_sequential", |b| {
        b.iter_batched(
            || packets.clone(),
            |pkts| black_box(simulate_batch_sequential(&sim, &pkts)),
            BatchSize::LargeInput,
        )
    });
    #[cfg(feature = "parallel")]
    group.bench_function("pipeline_parallel", |b| {
        b.iter_batched(
            || packets.clone(),
            |pkts| black_box(simulate_batch(&sim, &pkts)),
            BatchSize::LargeInput,
        )
    });
    group.bench_function("reference_sequential", |b| {
        b.iter_batched(
            || packets.clone(),
            |pkts| {
                black_box(
                    pkts.iter()
                        .map(|p| reference_parse(&graph, p))
                        .collect::<Vec<_>>(),
                )
            },
            BatchSize::LargeInput,
        )
    });
    group.finish();
}

criterion_group!(benches, bench_batch);
criterion_main!(benches);
