use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use idxfabric::pipeline::{ingest, synth_volume, SynthKind};
use idxfabric::prelude::*;
use idxfabric_bench::cube;

fn reads(c: &mut Criterion) {
    let ds = cube(64, 12, StoreProfile::local());
    let m = ds.descriptor().total_bits();
    let mut g = c.benchmark_group("read");
    for level in [m - 6, m - 3, m] {
        let q = Query::new("value").at_level(level);
        g.bench_with_input(BenchmarkId::new("full", level), &q, |b, q| {
            b.iter(|| ds.read(q, &Constraints::default()).unwrap().values.len())
        });
    }
    let q = Query::new("value").with_region(Region::new(vec![8..40, 8..40, 30..31]));
    g.bench_function("slice", |b| b.iter(|| ds.read(&q, &Constraints::default()).unwrap().values.len()));
    g.bench_function("progressive", |b| {
        b.iter(|| ds.read_progressive(&Query::new("value"), &Constraints::default()).unwrap().count())
    });
    let tight = Constraints { max_bytes: Some(1 << 12), ..Default::default() };
    g.bench_function("plan_constrained", |b| b.iter(|| ds.plan(&Query::new("value"), &tight).unwrap()));
    g.finish();
}

fn ingestion(c: &mut Criterion) {
    let raw = synth_volume(&[64, 64, 64], 2, SynthKind::Turbulent);
    let mut g = c.benchmark_group("ingest");
    g.sample_size(10);
    for codec in [CodecSpec::Raw, CodecSpec::Lossless] {
        g.bench_function(codec.to_string(), |b| {
            b.iter(|| {
                let mut d = DatasetDescriptor::new(
                    "ingest",
                    &[('x', 64), ('y', 64), ('z', 64)],
                    vec![FieldDesc { name: raw.field.clone(), fill: raw.fill }],
                    1,
                    14,
                )
                .unwrap();
                ingest(&raw, &mut d, &MemStore::new(), codec).unwrap().blocks_written
            })
        });
    }
    g.finish();
}

criterion_group!(benches, reads, ingestion);
criterion_main!(benches);
