#![allow(dead_code)]

use std::sync::Arc;

use idxfabric::codec::{truncate_precision, unpack_f32_block, CodecSpec};
use idxfabric::index::{level_grid, morton_decode, z_of};
use idxfabric::pipeline::{ingest, make_replica, synth_volume, RawVolume, SynthKind};
use idxfabric::prelude::*;

pub const FIELD: &str = "value";

pub struct Fixture {
    pub raw: RawVolume,
    pub descriptor: DatasetDescriptor,
    pub store: Arc<MemStore>,
}

/// Seeded volume ingested as lossless plus the given truncated replicas.
pub fn fixture(axes: &[(char, u64)], block_bits: u32, seed: u64, truncations: &[u32]) -> Fixture {
    fixture_in(axes, block_bits, seed, truncations, MemStore::new())
}

pub fn fixture_in(axes: &[(char, u64)], block_bits: u32, seed: u64, truncations: &[u32], store: MemStore) -> Fixture {
    let extents: Vec<u64> = axes.iter().map(|(_, e)| *e).collect();
    let raw = synth_volume(&extents, seed, SynthKind::Turbulent);
    let mut descriptor =
        DatasetDescriptor::new("fixture", axes, vec![FieldDesc { name: FIELD.into(), fill: raw.fill }], 1, block_bits)
            .unwrap();
    let store = Arc::new(store);
    ingest(&raw, &mut descriptor, &*store, CodecSpec::Lossless).unwrap();
    for p in truncations {
        make_replica(&mut descriptor, &*store, CodecSpec::Truncate(*p as u8), false).unwrap();
    }
    Fixture { raw, descriptor, store }
}

impl Fixture {
    pub fn dataset(&self) -> Dataset {
        Dataset::with_descriptor("fixture", self.descriptor.clone(), self.store.clone(), OpenOptions::default())
            .unwrap()
    }
}

/// Decodes every block of `replica` into a padded row-major volume using the
/// bitwise address functions.
pub fn decode_all(d: &DatasetDescriptor, store: &dyn BlockStore, replica: &str) -> (Vec<u64>, Vec<f32>) {
    let pattern = d.bit_pattern().unwrap();
    let m = pattern.total_bits();
    let padded = pattern.padded_extents();
    let mut out = vec![f32::NAN; padded.iter().product::<u64>() as usize];
    let samples = 1u64 << d.block_bits;
    for b in 0..d.block_count() {
        let key = BlockKey::new(&d.id, FIELD, 0, replica, b);
        let values = unpack_f32_block(&store.get_block(&key).unwrap()).unwrap();
        for (i, v) in values.iter().enumerate() {
            let hz = b * samples + i as u64;
            let coords = morton_decode(z_of(hz, m).unwrap(), &pattern).unwrap();
            let off = coords.iter().zip(&padded).fold(0u64, |acc, (c, e)| acc * e + c);
            out[off as usize] = *v;
        }
    }
    (padded, out)
}

/// Decode everything, keep the level-`level` lattice, crop to `region`.
pub fn oracle(f: &Fixture, region: &Region, level: u32, replica: &str) -> Vec<f32> {
    let (padded, volume) = decode_all(&f.descriptor, &*f.store, replica);
    let grid = level_grid(&f.descriptor.bit_pattern().unwrap(), level).unwrap();
    let mut out = Vec::new();
    let d = padded.len();
    let mut coords = vec![0u64; d];
    let total: u64 = padded.iter().product();
    for _ in 0..total {
        if region.contains(&coords) && grid.contains(&coords) {
            let off = coords.iter().zip(&padded).fold(0u64, |acc, (c, e)| acc * e + c);
            out.push(volume[off as usize]);
        }
        for a in (0..d).rev() {
            coords[a] += 1;
            if coords[a] < padded[a] {
                break;
            }
            coords[a] = 0;
        }
    }
    out
}

/// The raw samples on the level lattice inside `region`, masked to `precision` bits.
pub fn raw_subsample(raw: &RawVolume, d: &DatasetDescriptor, region: &Region, level: u32, precision: u32) -> Vec<f32> {
    let grid = level_grid(&d.bit_pattern().unwrap(), level).unwrap();
    let values: Vec<f32> = raw
        .data
        .iter()
        .enumerate()
        .filter(|(i, _)| {
            let mut rest = *i as u64;
            let mut coords = vec![0u64; raw.extents.len()];
            for a in (0..raw.extents.len()).rev() {
                coords[a] = rest % raw.extents[a];
                rest /= raw.extents[a];
            }
            region.contains(&coords) && grid.contains(&coords)
        })
        .map(|(_, v)| *v)
        .collect();
    if precision < 32 {
        truncate_precision(&values, precision).unwrap()
    } else {
        values
    }
}

pub fn bits(values: &[f32]) -> Vec<u32> {
    values.iter().map(|v| v.to_bits()).collect()
}
