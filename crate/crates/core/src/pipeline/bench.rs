//! Storage studies: block size against object count and read cost, and read
//! time per level for local, remote and cached access.

use std::io::Write;
use std::time::Instant;

use serde::Serialize;

use super::{ingest_with, IngestOptions, PipelineError, RawVolume};
use crate::codec::CodecSpec;
use crate::dataset::{DatasetDescriptor, FieldDesc};
use crate::fabric::{Constraints, Dataset, FabricError, Query};
use crate::store::{BlockStore, MemStore, StoreProfile};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockSizeRow {
    pub block_bits: u32,
    pub block_bytes: u64,
    pub objects: u64,
    pub ingest_s: f64,
    pub encoded_bytes: u64,
    /// Modelled time to fetch every object from a store with the given profile.
    pub simulated_read_s: f64,
}

/// Ingests `raw` once per block size into a fresh in-memory store.
pub fn bench_blocksize(
    raw: &RawVolume,
    block_bits: &[u32],
    profile: StoreProfile,
    codec: CodecSpec,
) -> Result<Vec<BlockSizeRow>, PipelineError> {
    let names = ['x', 'y', 'z', 'u', 'v', 'w'];
    let axes: Vec<(char, u64)> = names.iter().copied().zip(raw.extents.iter().copied()).collect();
    let mut ks = block_bits.to_vec();
    ks.sort_unstable();
    ks.dedup();
    let mut rows = Vec::with_capacity(ks.len());
    for k in ks {
        let mut descriptor = DatasetDescriptor::new(
            "bench",
            &axes,
            vec![FieldDesc { name: raw.field.clone(), fill: raw.fill }],
            raw.timestep + 1,
            k,
        )?;
        let store = MemStore::new();
        let options = IngestOptions { parallel: false, ..Default::default() };
        let report = ingest_with(raw, &mut descriptor, &store, codec, &options)?;
        let objects = store.list_blocks("bench", &raw.field, raw.timestep, &report.replica)?.len() as u64;
        rows.push(BlockSizeRow {
            block_bits: k,
            block_bytes: 4 << k,
            objects,
            ingest_s: report.seconds,
            encoded_bytes: report.encoded_bytes,
            simulated_read_s: profile.transfer_ms(objects, report.encoded_bytes) / 1000.0,
        });
    }
    Ok(rows)
}

pub fn write_blocksize_csv(rows: &[BlockSizeRow], mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "block_bits,block_bytes,objects,ingest_s,encoded_bytes,simulated_read_s")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{:.6},{},{:.6}",
            r.block_bits, r.block_bytes, r.objects, r.ingest_s, r.encoded_bytes, r.simulated_read_s
        )?;
    }
    Ok(())
}

/// Three handles on the same dataset: local, remote without cache, remote with cache.
pub struct LocationSetup<'a> {
    pub local: &'a Dataset,
    pub remote: &'a Dataset,
    pub cached: &'a Dataset,
    pub field: String,
    pub timestep: u32,
    pub levels: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocationRow {
    pub level: u32,
    pub samples: u64,
    pub local_cold_s: f64,
    pub local_warm_s: f64,
    pub remote_cold_s: f64,
    pub remote_warm_s: f64,
    pub cached_cold_s: f64,
    pub cached_warm_s: f64,
    /// Backing-store requests made by the warm cached read.
    pub cached_warm_requests: u64,
}

fn timed(ds: &Dataset, q: &Query) -> Result<(f64, u64, u64), PipelineError> {
    let t = Instant::now();
    let r = ds.read(q, &Constraints::default()).map_err(Box::new)?;
    Ok((t.elapsed().as_secs_f64(), r.stats.requests, r.plan.samples()))
}

/// Full-domain reads at each level; the cache is emptied before each cold read.
pub fn bench_locations(setup: &LocationSetup<'_>) -> Result<Vec<LocationRow>, PipelineError> {
    let cache =
        setup.cached.cache().ok_or_else(|| Box::new(FabricError::BadQuery("cached handle has no cache".into())))?;
    let mut rows = Vec::with_capacity(setup.levels.len());
    for &level in &setup.levels {
        let q = Query::new(&setup.field).at_timestep(setup.timestep).at_level(level);
        let (local_cold_s, _, samples) = timed(setup.local, &q)?;
        let (local_warm_s, _, _) = timed(setup.local, &q)?;
        let (remote_cold_s, _, _) = timed(setup.remote, &q)?;
        let (remote_warm_s, _, _) = timed(setup.remote, &q)?;
        cache.clear();
        let (cached_cold_s, _, _) = timed(setup.cached, &q)?;
        let (cached_warm_s, cached_warm_requests, _) = timed(setup.cached, &q)?;
        rows.push(LocationRow {
            level,
            samples,
            local_cold_s,
            local_warm_s,
            remote_cold_s,
            remote_warm_s,
            cached_cold_s,
            cached_warm_s,
            cached_warm_requests,
        });
    }
    Ok(rows)
}

pub fn write_locations_csv(rows: &[LocationRow], mut w: impl Write) -> std::io::Result<()> {
    writeln!(
        w,
        "level,samples,local_cold_s,local_warm_s,remote_cold_s,remote_warm_s,cached_cold_s,cached_warm_s,cached_warm_requests"
    )?;
    for r in rows {
        writeln!(
            w,
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{}",
            r.level,
            r.samples,
            r.local_cold_s,
            r.local_warm_s,
            r.remote_cold_s,
            r.remote_warm_s,
            r.cached_cold_s,
            r.cached_warm_s,
            r.cached_warm_requests
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{synth_volume, SynthKind};

    #[test]
    fn object_count_halves_per_bit() {
        let raw = synth_volume(&[32, 32, 16], 2, SynthKind::Smooth);
        let rows = bench_blocksize(&raw, &[10, 8, 12], StoreProfile::remote(10.0, 0.0, 0.0), CodecSpec::Raw).unwrap();
        assert_eq!(rows.iter().map(|r| r.block_bits).collect::<Vec<_>>(), vec![8, 10, 12]);
        assert_eq!(rows.iter().map(|r| r.objects).collect::<Vec<_>>(), vec![64, 16, 4]);
        assert!(rows[0].simulated_read_s > rows[2].simulated_read_s);
        let mut csv = Vec::new();
        write_blocksize_csv(&rows, &mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 4);
    }
}
