//! Shared fixtures for the benchmarks.

use std::sync::Arc;

use idxfabric::pipeline::{ingest, make_replica, synth_volume, SynthKind};
use idxfabric::prelude::*;

/// Cubic smooth volume of side `n`, ingested lossless plus truncate-16 into
/// a store with the given profile.
pub fn cube(n: u64, block_bits: u32, profile: StoreProfile) -> Dataset {
    let raw = synth_volume(&[n, n, n], 1, SynthKind::Smooth);
    let mut d = DatasetDescriptor::new(
        "bench",
        &[('x', n), ('y', n), ('z', n)],
        vec![FieldDesc { name: raw.field.clone(), fill: raw.fill }],
        1,
        block_bits,
    )
    .expect("valid descriptor");
    let store = Arc::new(MemStore::with_profile(profile));
    ingest(&raw, &mut d, &*store, CodecSpec::Lossless).expect("ingest");
    make_replica(&mut d, &*store, CodecSpec::Truncate(16), true).expect("replica");
    Dataset::with_descriptor("bench", d, store, OpenOptions::default()).expect("open")
}
