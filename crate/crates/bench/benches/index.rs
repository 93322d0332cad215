use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use idxfabric::index::{default_pattern, hz_of, morton_decode, morton_encode, z_of, ZEncoder};
use std::hint::black_box;

fn addressing(c: &mut Criterion) {
    let pattern = default_pattern(&[('x', 7), ('y', 7), ('z', 7)]).unwrap();
    let m = pattern.total_bits();
    let encoder = ZEncoder::new(&pattern);
    let n = 1u64 << 16;
    let mut g = c.benchmark_group("addressing");
    g.throughput(Throughput::Elements(n));
    g.bench_function("morton_encode", |b| {
        b.iter(|| (0..n).map(|i| morton_encode(&[i & 127, (i >> 7) & 127, i >> 14], &pattern).unwrap()).sum::<u64>())
    });
    g.bench_function("z_encoder", |b| {
        b.iter(|| (0..n).map(|i| encoder.encode(&[i & 127, (i >> 7) & 127, i >> 14])).sum::<u64>())
    });
    g.bench_function("hz_roundtrip", |b| {
        b.iter(|| {
            (0..n)
                .map(|z| {
                    let (_, hz) = hz_of(black_box(z), m).unwrap();
                    morton_decode(z_of(hz, m).unwrap(), &pattern).unwrap()[0]
                })
                .sum::<u64>()
        })
    });
    g.finish();
}

fn block_enumeration(c: &mut Criterion) {
    use idxfabric::index::{blocks_for_box, Region};
    let pattern = default_pattern(&[('x', 8), ('y', 8), ('z', 8)]).unwrap();
    let mut g = c.benchmark_group("blocks_for_box");
    for side in [16u64, 64, 256] {
        let region = Region::new(vec![0..side, 0..side, 0..side]);
        g.bench_with_input(BenchmarkId::from_parameter(side), &region, |b, r| {
            b.iter(|| blocks_for_box(r, 24, &pattern, 12).unwrap().len())
        });
    }
    g.finish();
}

criterion_group!(benches, addressing, block_enumeration);
criterion_main!(benches);
