//! Throughput benchmarks for the hot codec paths: range coding, nearest
//! neighbors, patch encoding, and whole-scan compression.

use criterion::{black_box, criterion_group, criterion_main, Criterion, Throughput};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lprs_core::bottleneck::rangecoder::{CdfTable, RangeDecoder, RangeEncoder};
use lprs_core::codec;
use lprs_core::config::{CodecConfig, SamplerKind};
use lprs_core::harness::synth::{synth_scan, wedge_scene};
use lprs_core::kdtree::KdTree;
use lprs_core::quality;

fn bench_range_coder(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let counts: Vec<u32> = (0..256).map(|_| rng.gen_range(1..512)).collect();
    let table = CdfTable::from_counts(&counts);
    let symbols: Vec<usize> = (0..10_000).map(|_| rng.gen_range(0..256)).collect();
    let mut enc = RangeEncoder::new();
    for &s in &symbols {
        enc.encode(&table, s);
    }
    let encoded = enc.finish();

    let mut group = c.benchmark_group("range_coder");
    group.throughput(Throughput::Elements(symbols.len() as u64));
    group.bench_function("encode_10k", |b| {
        b.iter(|| {
            let mut enc = RangeEncoder::new();
            for &s in &symbols {
                enc.encode(&table, s);
            }
            black_box(enc.finish())
        })
    });
    group.bench_function("decode_10k", |b| {
        b.iter(|| {
            let mut dec = RangeDecoder::new(&encoded).unwrap();
            for _ in 0..symbols.len() {
                black_box(dec.decode(&table).unwrap());
            }
        })
    });
    group.finish();
}

fn random_cloud(n: usize, seed: u64) -> Vec<[f64; 3]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            [
                rng.gen_range(-20.0..20.0),
                rng.gen_range(-20.0..20.0),
                rng.gen_range(-2.0..2.0),
            ]
        })
        .collect()
}

fn bench_nearest_neighbors(c: &mut Criterion) {
    let cloud = random_cloud(10_000, 2);
    let queries = random_cloud(1_000, 3);
    let mut group = c.benchmark_group("kdtree");
    group.bench_function("build_10k", |b| b.iter(|| black_box(KdTree::new(&cloud))));
    let tree = KdTree::new(&cloud);
    group.throughput(Throughput::Elements(queries.len() as u64));
    group.bench_function("nearest_1k_queries", |b| {
        b.iter(|| {
            for q in &queries {
                black_box(tree.nearest(q));
            }
        })
    });
    group.finish();

    c.bench_function("chamfer_2x2k", |b| {
        let a = random_cloud(2_000, 4);
        let t = random_cloud(2_000, 5);
        b.iter(|| black_box(quality::chamfer(&a, &t).unwrap()))
    });
}

fn bench_compression(c: &mut Criterion) {
    let cfg = CodecConfig::desk_default();
    let store = codec::init_store(&cfg, 7);
    let scan = synth_scan(&wedge_scene(cfg.grid, 11));

    let mut group = c.benchmark_group("codec");
    group.sample_size(10);
    group.throughput(Throughput::Elements(scan.len() as u64));
    group.bench_function("compress_scan", |b| {
        b.iter(|| {
            black_box(codec::compress(&scan, &store, &cfg, SamplerKind::Learnable, 3).unwrap())
        })
    });
    let out = codec::compress(&scan, &store, &cfg, SamplerKind::Learnable, 3).unwrap();
    group.bench_function("decompress_scan", |b| {
        b.iter(|| black_box(codec::decompress(&out.bytes, &store).unwrap()))
    });
    group.finish();
}

criterion_group!(
    benches,
    bench_range_coder,
    bench_nearest_neighbors,
    bench_compression
);
criterion_main!(benches);
