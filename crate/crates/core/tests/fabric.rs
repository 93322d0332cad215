mod common;

use std::sync::Arc;

use common::{bits, fixture, fixture_in, oracle, raw_subsample, Fixture, FIELD};
use idxfabric::fabric::{CacheConfig, FdoRegistry, Location};
use idxfabric::prelude::*;
use idxfabric::store::FaultConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_region(rng: &mut ChaCha8Rng, extents: &[u64]) -> Region {
    Region::new(
        extents
            .iter()
            .map(|e| {
                let lo = rng.random_range(0..*e);
                lo..rng.random_range(lo + 1..=*e)
            })
            .collect(),
    )
}

#[test]
fn randomized_reads_match_decode_everything_oracle() {
    let f = fixture(&[('x', 32), ('y', 32), ('z', 32)], 9, 11, &[16, 24]);
    let ds = f.dataset();
    let m = f.descriptor.total_bits();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let replicas = [("lossless", 32), ("truncate-24", 24), ("truncate-16", 16)];
    for _ in 0..60 {
        let region = random_region(&mut rng, &[32, 32, 32]);
        let level = rng.random_range(0..=m);
        let (replica, p) = replicas[rng.random_range(0..replicas.len())];
        let q = Query::new(FIELD).with_region(region.clone()).at_level(level).with_precision(p);
        let r = ds.read(&q, &Constraints::default()).unwrap();
        assert_eq!(r.plan.replica, replica);
        assert_eq!(r.plan.level, level);
        assert_eq!(r.values.len() as u64, r.plan.counts.iter().product::<u64>());
        assert_eq!(bits(&r.values), bits(&oracle(&f, &region, level, replica)), "{region:?} level {level} {replica}");
        assert_eq!(bits(&r.values), bits(&raw_subsample(&f.raw, &f.descriptor, &region, level, p)));
    }
}

#[test]
fn full_lossless_read_is_the_raw_volume() {
    let f = fixture(&[('x', 20), ('y', 12), ('z', 7)], 6, 3, &[]);
    let r = f.dataset().read(&Query::new(FIELD), &Constraints::default()).unwrap();
    assert_eq!(r.plan.counts, vec![20, 12, 7]);
    assert_eq!(bits(&r.values), bits(&f.raw.data));
}

#[test]
fn level_zero_is_the_origin_sample() {
    let f = fixture(&[('x', 16), ('y', 16)], 4, 3, &[]);
    let r = f.dataset().read(&Query::new(FIELD).at_level(0), &Constraints::default()).unwrap();
    assert_eq!(r.values, vec![f.raw.data[0]]);
    assert_eq!(r.stats.requests, 1);
}

#[test]
fn progressive_contract() {
    let f = fixture(&[('x', 32), ('y', 16), ('z', 8)], 6, 21, &[16]);
    let ds = f.dataset();
    let pattern = f.descriptor.bit_pattern().unwrap();
    let m = pattern.total_bits();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..20 {
        let region = random_region(&mut rng, &[32, 16, 8]);
        let level = rng.random_range(0..=m);
        let q = Query::new(FIELD).with_region(region.clone()).at_level(level);
        let full = ds.read(&q, &Constraints::default()).unwrap();
        let emissions: Vec<_> =
            ds.read_progressive(&q, &Constraints::default()).unwrap().collect::<Result<_, _>>().unwrap();
        assert_eq!(emissions.len() as u32, full.plan.level + 1);
        assert!(emissions[0].stats.blocks <= 1);
        let fine = idxfabric::index::level_grid(&pattern, full.plan.level).unwrap();
        // grid coordinates of every output position
        let coords: Vec<Vec<u64>> = {
            let spans: Vec<(u64, u64, u64)> = (0..3)
                .map(|a| {
                    let (first, n) = fine.axis_span(a, &region.ranges[a]);
                    (first, n, fine.strides[a])
                })
                .collect();
            let mut out = Vec::new();
            for i in 0..spans[0].1 {
                for j in 0..spans[1].1 {
                    for k in 0..spans[2].1 {
                        out.push(vec![
                            spans[0].0 + i * spans[0].2,
                            spans[1].0 + j * spans[1].2,
                            spans[2].0 + k * spans[2].2,
                        ]);
                    }
                }
            }
            out
        };
        for (i, e) in emissions.iter().enumerate() {
            assert_eq!(e.level, i as u32);
            assert_eq!(e.values.len(), full.values.len());
            let known = idxfabric::index::level_grid(&pattern, e.level).unwrap();
            for (pos, c) in coords.iter().enumerate() {
                if known.contains(c) {
                    assert_eq!(e.values[pos].to_bits(), full.values[pos].to_bits(), "level {} at {c:?}", e.level);
                }
            }
            if i > 0 {
                assert!(e.stats.blocks >= emissions[i - 1].stats.blocks);
            }
        }
        assert_eq!(bits(&emissions.last().unwrap().values), bits(&full.values));
    }
}

#[test]
fn dropping_a_progressive_read_stops_fetching() {
    let f = fixture(&[('x', 32), ('y', 32)], 4, 2, &[]);
    let ds = f.dataset();
    let before = ds.egress().requests;
    let mut stream = ds.read_progressive(&Query::new(FIELD), &Constraints::default()).unwrap();
    let total_blocks = stream.plan().blocks.len() as u64;
    stream.next().unwrap().unwrap();
    stream.next().unwrap().unwrap();
    drop(stream);
    let used = ds.egress().requests - before;
    assert!(used < total_blocks, "{used} of {total_blocks}");
}

fn cached(f: &Fixture, dir: &std::path::Path, capacity_bytes: u64) -> Dataset {
    let options = OpenOptions { cache: Some(CacheConfig { dir: dir.to_path_buf(), capacity_bytes }), retries: 0 };
    Dataset::with_descriptor("fixture", f.descriptor.clone(), f.store.clone(), options).unwrap()
}

#[test]
fn cache_is_transparent_and_absorbs_repeat_reads() {
    let f = fixture(&[('x', 32), ('y', 32)], 6, 4, &[]);
    let dir = tempfile::tempdir().unwrap();
    let with = cached(&f, dir.path(), 1 << 30);
    let q = Query::new(FIELD);
    let first = with.read(&q, &Constraints::default()).unwrap();
    let second = with.read(&q, &Constraints::default()).unwrap();
    assert_eq!(second.stats.requests, 0);
    assert_eq!(second.stats.cache_hits, first.stats.cache_misses);
    let plain = f.dataset().read(&q, &Constraints::default()).unwrap();
    assert_eq!(bits(&first.values), bits(&plain.values));
    assert_eq!(bits(&second.values), bits(&plain.values));
    let s = with.cache().unwrap().stats();
    assert_eq!(s.hits + s.misses, 2 * first.plan.blocks.len() as u64);
    assert!(s.resident_bytes <= s.capacity_bytes);
}

#[test]
fn one_block_cache_evicts() {
    let f = fixture(&[('x', 16), ('y', 16)], 4, 4, &[]);
    let dir = tempfile::tempdir().unwrap();
    let max = f.descriptor.replica("lossless").unwrap().max_block_bytes;
    let ds = cached(&f, dir.path(), max);
    let mut stats = Default::default();
    let key = BlockKey::new("fixture", FIELD, 0, "lossless", 0);
    for b in [1, 2, 1] {
        ds.fetch_block(&key.with_block(b), &mut stats).unwrap();
    }
    assert_eq!((stats.cache_misses, stats.cache_hits), (3, 0));
}

#[test]
fn retries_ride_out_injected_faults() {
    let faults = FaultConfig { drop_probability: 0.2, timeout_probability: 0.2, seed: 3 };
    let f = fixture_in(&[('x', 16), ('y', 16)], 3, 1, &[], MemStore::new());
    let flaky = Arc::new(MemStore::new().with_faults(faults));
    idxfabric::store::copy_dataset(&f.descriptor, &*f.store, &*flaky).unwrap();
    let q = Query::new(FIELD);
    let no_retry = Dataset::with_descriptor("d", f.descriptor.clone(), flaky.clone(), OpenOptions::default()).unwrap();
    assert!(matches!(no_retry.read(&q, &Constraints::default()), Err(FabricError::Store(_))));
    let options = OpenOptions { cache: None, retries: 30 };
    let patient = Dataset::with_descriptor("d", f.descriptor.clone(), flaky, options).unwrap();
    let r = patient.read(&q, &Constraints::default()).unwrap();
    assert!(r.stats.retries > 0);
    assert_eq!(bits(&r.values), bits(&f.raw.data));
}

#[test]
fn corrupt_blocks_are_reported_and_never_cached() {
    let f = fixture(&[('x', 16), ('y', 16)], 4, 6, &[]);
    let key = BlockKey::new("fixture", FIELD, 0, "lossless", 3);
    let mut env = f.store.get_block(&key).unwrap();
    let n = env.len();
    env[n - 1] ^= 0x10;
    f.store.put_block(&key, &env).unwrap();
    let err = f.dataset().read(&Query::new(FIELD), &Constraints::default()).unwrap_err();
    assert!(matches!(err, FabricError::CorruptBlock { .. }), "{err}");
    let dir = tempfile::tempdir().unwrap();
    let ds = cached(&f, dir.path(), 1 << 30);
    assert!(ds.read(&Query::new(FIELD), &Constraints::default()).is_err());
    assert!(!ds.cache().unwrap().contains(&key));
}

#[test]
fn precision_selects_cheapest_qualifying_replica() {
    let f = fixture(&[('x', 16), ('y', 16), ('z', 16)], 8, 8, &[16, 24]);
    let ds = f.dataset();
    let r = ds.read(&Query::new(FIELD).with_precision(20), &Constraints::default()).unwrap();
    assert_eq!(r.plan.replica, "truncate-24");
    assert_eq!(r.plan.precision, 24);
    let all = Region::full(&[16, 16, 16]);
    assert_eq!(bits(&r.values), bits(&raw_subsample(&f.raw, &f.descriptor, &all, 12, 24)));
}

fn in_range_dataset(values: Vec<f32>, fill: f32) -> Dataset {
    let n = values.len() as u64;
    let raw = idxfabric::pipeline::RawVolume::new(FIELD, 0, vec![n], fill, values).unwrap();
    let mut d = DatasetDescriptor::new("r", &[('x', n)], vec![FieldDesc { name: FIELD.into(), fill }], 1, 1).unwrap();
    let store = Arc::new(MemStore::new());
    ingest(&raw, &mut d, &*store, CodecSpec::Lossless).unwrap();
    Dataset::with_descriptor("r", d, store, OpenOptions::default()).unwrap()
}

#[test]
fn fraction_in_range_examples() {
    let ds = in_range_dataset(vec![0.0, 1.0, 2.0, 3.0], -9.0);
    let q = Query::new(FIELD);
    assert_eq!(ds.fraction_in_range(&q, 1.0, 2.0).unwrap().percent, 50.0);
    assert_eq!(ds.fraction_in_range(&q, 0.0, 3.0).unwrap().percent, 100.0);
    let ds = in_range_dataset(vec![-9.0, 0.5, -9.0, 0.5], -9.0);
    let r = ds.fraction_in_range(&q, 0.0, 1.0).unwrap();
    assert_eq!((r.percent, r.counted, r.excluded_fill), (100.0, 2, 2));
    let ds = in_range_dataset(vec![-9.0; 4], -9.0);
    assert!(matches!(ds.fraction_in_range(&q, 0.0, 1.0), Err(FabricError::EmptySelection)));
    assert!(matches!(ds.fraction_in_range(&q, 2.0, 1.0), Err(FabricError::BadQuery(_))));
}

#[test]
fn open_by_path_and_fdo() {
    let f = fixture(&[('x', 16), ('y', 16)], 4, 9, &[]);
    let dir = tempfile::tempdir().unwrap();
    let disk = DirStore::create(dir.path()).unwrap();
    idxfabric::store::copy_dataset(&f.descriptor, &*f.store, &disk).unwrap();
    let uri = dir.path().to_str().unwrap().to_string();

    let ds = Dataset::open(&uri).unwrap();
    assert!(ds.cache().is_none());
    let fdo = ds.fdo();
    assert_eq!(fdo.identifier, uri);
    assert!(fdo.operations.iter().any(|o| o == "read"));
    assert!(fdo.operations.iter().any(|o| o == "read_progressive"));
    let reopened = fdo.locator.resolve().unwrap();
    assert_eq!(reopened.get_descriptor("fixture").unwrap(), f.descriptor);

    let json = format!("{uri}/dataset.json");
    let by_file = Dataset::open(&json).unwrap();
    let r = by_file.read(&Query::new(FIELD), &Constraints::default()).unwrap();
    assert_eq!(bits(&r.values), bits(&f.raw.data));

    let mut registry = FdoRegistry::new();
    registry.register(fdo.clone()).unwrap();
    assert!(matches!(registry.register(fdo), Err(FabricError::DuplicateIdentifier(_))));
    let resolved = registry.resolve(&uri, OpenOptions::default()).unwrap();
    assert_eq!(resolved.descriptor(), &f.descriptor);

    let cache_dir = tempfile::tempdir().unwrap();
    let cached_uri = format!("file://{uri}?cached=arco&cache_dir={}", cache_dir.path().display());
    let c = Dataset::open(&cached_uri).unwrap();
    c.read(&Query::new(FIELD), &Constraints::default()).unwrap();
    let again = c.read(&Query::new(FIELD), &Constraints::default()).unwrap();
    assert_eq!(again.stats.requests, 0);
    assert!(cache_dir.path().join("fixture").is_dir());
}

#[test]
fn open_errors() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope");
    assert!(matches!(Dataset::open(missing.to_str().unwrap()), Err(FabricError::UnreachableStore(_))));
    std::fs::write(dir.path().join("dataset.json"), b"{not json").unwrap();
    assert!(matches!(Dataset::open(dir.path().to_str().unwrap()), Err(FabricError::BadDescriptor(_))));
    assert!(matches!(Dataset::open("gopher://x/y"), Err(FabricError::BadUri(_))));
    assert!(matches!(Dataset::open("/tmp?cached=sometimes"), Err(FabricError::BadUri(_))));
    let u = idxfabric::fabric::DatasetUri::parse("http://127.0.0.1:9/v1/datasets/d").unwrap();
    assert!(matches!(u.location(), Location::Http { .. }));
    assert!(matches!(Dataset::open("http://127.0.0.1:9/v1/datasets/d"), Err(FabricError::UnreachableStore(_))));
}
