//! Microbenchmarks for the hot paths: memory updates, neighborhood
//! embedding, scoring, a full training step, and ranking metrics.

use criterion::{criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;
use tgrec_core::data::{generate_synthetic, SyntheticConfig};
use tgrec_core::decoder;
use tgrec_core::memory::{apply_events, Aggregator, MemoryState, MessageVariant};
use tgrec_core::metrics;
use tgrec_core::model::{ModelDims, ModelParams};
use tgrec_core::tensor::{Tape, Tensor};
use tgrec_core::train::{TrainConfig, Trainer};
use tgrec_core::transformer;
use tgrec_core::{Event, TemporalGraph};

const D_MEM: usize = 32;
const NODES: usize = 200;

fn params(rng: &mut ChaCha8Rng) -> ModelParams<f64> {
    ModelParams::init(
        ModelDims {
            d_mem: D_MEM,
            d_time: 32,
            d_out: 32,
            d_dec: 32,
            heads: 2,
            message: MessageVariant::SelfLearned,
            feat_dim: None,
        },
        rng,
    )
    .unwrap()
}

fn random_events(rng: &mut ChaCha8Rng, n: usize) -> Vec<Event> {
    (0..n)
        .map(|i| Event {
            event_id: i as u64,
            src: rng.random_range(0..NODES),
            dst: rng.random_range(0..NODES),
            t: i as f64,
            edge_feat: None,
        })
        .collect()
}

fn bench_memory_update(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let p = params(&mut rng);
    let events = random_events(&mut rng, 100);
    c.bench_function("memory_update_100_events", |b| {
        b.iter(|| {
            let mut mem = MemoryState::<f64>::zeros(NODES, D_MEM);
            apply_events(&p, &mut mem, black_box(&events), Aggregator::Last).unwrap();
            mem
        })
    });
}

fn bench_transformer_embed(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let p = params(&mut rng);
    let states: Vec<Tensor<f64>> = (0..11)
        .map(|_| {
            Tensor::vector((0..D_MEM).map(|_| rng.random_range(-1.0..1.0)).collect())
        })
        .collect();
    let neighbors: Vec<(usize, f64, f64)> = (1..=10)
        .map(|j| (j, j as f64, rng.random_range(0.1..30.0)))
        .collect();
    c.bench_function("transformer_embed_10_neighbors", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let tv = p.transformer.bind(&mut tape);
            let ev = p.time_enc.bind(&mut tape);
            let leaves: Vec<_> = states.iter().map(|s| tape.leaf(s.clone())).collect();
            let out = transformer::embed(
                &mut tape,
                &tv,
                &ev,
                &mut |_, id| leaves[id],
                0,
                black_box(&neighbors),
            )
            .unwrap();
            tape.value(out).data()[0]
        })
    });
}

fn bench_decoder_score(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let p = params(&mut rng);
    let src = Tensor::vector((0..32).map(|_| rng.random_range(-1.0..1.0)).collect());
    let dst = Tensor::vector((0..32).map(|_| rng.random_range(-1.0..1.0)).collect());
    c.bench_function("decoder_score", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let dv = p.decoder.bind(&mut tape);
            let s = tape.leaf(src.clone());
            let d = tape.leaf(dst.clone());
            let out = decoder::score(&mut tape, &dv, black_box(s), d).unwrap();
            tape.value(out).item()
        })
    });
}

fn bench_train_step(c: &mut Criterion) {
    let data = generate_synthetic(&SyntheticConfig {
        papers: 120,
        refs_per_paper: 5,
        seed_papers: 8,
        ..SyntheticConfig::default()
    })
    .unwrap();
    let ds = data.to_dataset().unwrap();
    let cfg = TrainConfig {
        epochs: 1,
        batch_size: 50,
        ..TrainConfig::default()
    };
    let graph: &TemporalGraph = &ds.graph;
    c.bench_function("train_step_50_events", |b| {
        b.iter(|| {
            let mut tr: Trainer<'_, f64> = Trainer::new(graph, cfg.clone()).unwrap();
            tr.step().unwrap();
            tr.step().unwrap()
        })
    });
}

fn bench_metrics(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let pos: Vec<f64> = (0..100).map(|_| rng.random_range(-1.0..1.0)).collect();
    let neg: Vec<f64> = (0..900).map(|_| rng.random_range(-1.0..1.0)).collect();
    let labels: Vec<bool> = (0..1000).map(|_| rng.random_bool(0.1)).collect();
    c.bench_function("auc_1000_scores", |b| {
        b.iter(|| metrics::auc(black_box(&pos), black_box(&neg)).unwrap())
    });
    c.bench_function("average_precision_1000_labels", |b| {
        b.iter(|| metrics::average_precision(black_box(&labels)).unwrap())
    });
}

criterion_group!(
    benches,
    bench_memory_update,
    bench_transformer_embed,
    bench_decoder_score,
    bench_train_step,
    bench_metrics
);
criterion_main!(benches);
