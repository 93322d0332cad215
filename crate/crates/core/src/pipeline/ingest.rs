use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use super::{PipelineError, RawVolume};
use crate::codec::{
    self, compression_factor, f32s_to_le_bytes, pack_envelope, unpack_envelope, unpack_f32_block, CodecSpec,
    EnvelopeHeader,
};
use crate::dataset::{DatasetDescriptor, DescriptorError};
use crate::index::{for_each_z, hz_of_unchecked, ZEncoder};
use crate::store::{BlockKey, BlockStore, StoreError};

type Result<T> = std::result::Result<T, PipelineError>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IngestOptions {
    /// Upper bound on the scatter buffer; larger volumes are written in several passes.
    pub buffer_bytes: u64,
    /// Encode blocks on the rayon pool.
    pub parallel: bool,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self { buffer_bytes: 256 << 20, parallel: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IngestReport {
    pub replica: String,
    /// Samples written, padding included.
    pub samples_written: u64,
    pub phantom_samples: u64,
    pub blocks_written: u64,
    pub passes: u64,
    pub raw_bytes: u64,
    pub encoded_bytes: u64,
    pub max_block_bytes: u64,
    pub seconds: f64,
}

impl IngestReport {
    /// Source megabytes (MiB) per second.
    pub fn throughput_mib_s(&self) -> f64 {
        self.raw_bytes as f64 / (1 << 20) as f64 / self.seconds.max(1e-9)
    }

    pub fn padded_fraction(&self) -> f64 {
        self.phantom_samples as f64 / self.samples_written as f64
    }
}

fn check_shape(raw: &RawVolume, descriptor: &DatasetDescriptor) -> Result<f32> {
    if raw.extents != descriptor.extents() {
        return Err(PipelineError::ShapeMismatch(format!(
            "volume extents {:?}, dataset extents {:?}",
            raw.extents,
            descriptor.extents()
        )));
    }
    if raw.timestep >= descriptor.timesteps {
        return Err(PipelineError::ShapeMismatch(format!(
            "timestep {} outside [0, {})",
            raw.timestep, descriptor.timesteps
        )));
    }
    descriptor
        .field(&raw.field)
        .map(|f| f.fill)
        .ok_or_else(|| PipelineError::ShapeMismatch(format!("unknown field '{}'", raw.field)))
}

fn axis_parts(encoder: &ZEncoder, extents: &[u64]) -> Vec<Vec<u64>> {
    extents.iter().enumerate().map(|(a, e)| (0..*e).map(|c| encoder.axis_part(a, c)).collect()).collect()
}

pub fn ingest(
    raw: &RawVolume,
    descriptor: &mut DatasetDescriptor,
    store: &dyn BlockStore,
    codec: CodecSpec,
) -> Result<IngestReport> {
    ingest_with(raw, descriptor, store, codec, &IngestOptions::default())
}

/// Reorders `raw` into HZ order, writes every block of the padded domain and
/// records the replica in the stored descriptor.
pub fn ingest_with(
    raw: &RawVolume,
    descriptor: &mut DatasetDescriptor,
    store: &dyn BlockStore,
    codec: CodecSpec,
    options: &IngestOptions,
) -> Result<IngestReport> {
    let started = Instant::now();
    let fill = check_shape(raw, descriptor)?;
    let pattern = descriptor.bit_pattern()?;
    let m = pattern.total_bits();
    let k = descriptor.block_bits;
    let encoder = ZEncoder::new(&pattern);
    let parts = axis_parts(&encoder, &raw.extents);

    let block_len = 1usize << k;
    let nblocks = 1u64 << (m - k);
    let per_pass = (options.buffer_bytes / (4 * block_len as u64)).clamp(1, nblocks);
    let replica = codec.to_string();
    let key = BlockKey::new(&descriptor.id, &raw.field, raw.timestep, &replica, 0);

    let mut passes = 0;
    let mut encoded_bytes = 0;
    let mut max_block_bytes = 0;
    let mut first = 0u64;
    while first < nblocks {
        let end = (first + per_pass).min(nblocks);
        let (lo, hi) = (first << k, end << k);
        let mut buf = vec![fill; (hi - lo) as usize];
        let mut i = 0;
        for_each_z(&parts, |z| {
            let hz = hz_of_unchecked(z, m).1;
            if hz >= lo && hz < hi {
                buf[(hz - lo) as usize] = raw.data[i];
            }
            i += 1;
        });
        let write = |(j, chunk): (usize, &[f32])| -> Result<u64> {
            let env = pack_envelope(codec, &f32s_to_le_bytes(chunk))?;
            store.put_block(&key.with_block(first + j as u64), &env)?;
            Ok(env.len() as u64)
        };
        let sizes: Vec<u64> = if options.parallel {
            buf.par_chunks(block_len).enumerate().map(write).collect::<Result<_>>()?
        } else {
            buf.chunks(block_len).enumerate().map(write).collect::<Result<_>>()?
        };
        encoded_bytes += sizes.iter().sum::<u64>();
        max_block_bytes = max_block_bytes.max(sizes.iter().copied().max().unwrap_or(0));
        passes += 1;
        first = end;
    }

    descriptor.record_replica(codec, max_block_bytes);
    store.put_descriptor(descriptor)?;
    Ok(IngestReport {
        replica,
        samples_written: 1u64 << m,
        phantom_samples: (1u64 << m) - raw.len() as u64,
        blocks_written: nblocks,
        passes,
        raw_bytes: raw.raw_bytes(),
        encoded_bytes,
        max_block_bytes,
        seconds: started.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicaStats {
    pub replica: String,
    pub blocks: u64,
    pub raw_bytes: u64,
    /// Stored envelope bytes, headers included.
    pub encoded_bytes: u64,
}

impl ReplicaStats {
    pub fn factor(&self) -> f64 {
        compression_factor(self.raw_bytes as f64, self.encoded_bytes as f64).map(|f| f.0).unwrap_or(0.0)
    }
}

fn source_replica(descriptor: &DatasetDescriptor) -> Option<String> {
    let rank = |c: &CodecSpec| match c {
        CodecSpec::Lossless => 0,
        CodecSpec::Raw => 1,
        CodecSpec::Truncate(_) => 2,
    };
    descriptor
        .replicas
        .iter()
        .filter(|r| r.codec.precision() == 32)
        .min_by_key(|r| rank(&r.codec))
        .map(|r| r.id.clone())
}

/// Re-encodes the full-precision replica with `codec` and records it.
pub fn make_replica(
    descriptor: &mut DatasetDescriptor,
    store: &dyn BlockStore,
    codec: CodecSpec,
    parallel: bool,
) -> Result<ReplicaStats> {
    let replica = codec.to_string();
    if descriptor.replica(&replica).is_some() {
        return Err(PipelineError::ReplicaExists(replica));
    }
    let source = source_replica(descriptor).ok_or(PipelineError::MissingSource)?;
    let mut stats = ReplicaStats { replica: replica.clone(), blocks: 0, raw_bytes: 0, encoded_bytes: 0 };
    let mut max_block_bytes = 0;
    for field in &descriptor.fields {
        for t in 0..descriptor.timesteps {
            let src = BlockKey::new(&descriptor.id, &field.name, t, &source, 0);
            let dst = BlockKey::new(&descriptor.id, &field.name, t, &replica, 0);
            let blocks = store.list_blocks(&descriptor.id, &field.name, t, &source)?;
            let convert = |b: &u64| -> Result<(u64, u64)> {
                let (_, raw) = unpack_envelope(&store.get_block(&src.with_block(*b))?)?;
                let env = pack_envelope(codec, &raw)?;
                store.put_block(&dst.with_block(*b), &env)?;
                Ok((raw.len() as u64, env.len() as u64))
            };
            let sizes: Vec<(u64, u64)> = if parallel {
                blocks.par_iter().map(convert).collect::<Result<_>>()?
            } else {
                blocks.iter().map(convert).collect::<Result<_>>()?
            };
            stats.blocks += sizes.len() as u64;
            for (r, e) in sizes {
                stats.raw_bytes += r;
                stats.encoded_bytes += e;
                max_block_bytes = max_block_bytes.max(e);
            }
        }
    }
    descriptor.record_replica(codec, max_block_bytes);
    store.put_descriptor(descriptor)?;
    Ok(stats)
}

/// Sums the stored sizes of one replica over every field and timestep.
pub fn replica_stats(descriptor: &DatasetDescriptor, store: &dyn BlockStore, replica: &str) -> Result<ReplicaStats> {
    let mut stats = ReplicaStats { replica: replica.into(), blocks: 0, raw_bytes: 0, encoded_bytes: 0 };
    for field in &descriptor.fields {
        for t in 0..descriptor.timesteps {
            let key = BlockKey::new(&descriptor.id, &field.name, t, replica, 0);
            for b in store.list_blocks(&descriptor.id, &field.name, t, replica)? {
                let bytes = store.get_block(&key.with_block(b))?;
                let header = EnvelopeHeader::parse(&bytes)?;
                stats.blocks += 1;
                stats.raw_bytes += header.raw_len;
                stats.encoded_bytes += bytes.len() as u64;
            }
        }
    }
    Ok(stats)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub replica: String,
    pub samples_checked: u64,
    /// Samples that differ from the codec's expected reconstruction.
    pub mismatches: u64,
    /// Padding samples that do not hold the fill value.
    pub phantom_mismatches: u64,
    /// Largest deviation from the source, over finite samples.
    pub max_abs_error: f64,
    pub psnr_db: Option<f64>,
    pub corrupt_blocks: Vec<(u64, String)>,
    pub missing_blocks: Vec<u64>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.mismatches == 0
            && self.phantom_mismatches == 0
            && self.corrupt_blocks.is_empty()
            && self.missing_blocks.is_empty()
    }
}

/// Reads every block of `replica` back and compares it with `raw`.
///
/// Lossless replicas must match bit for bit; `truncate-p` replicas must match
/// the masked source.
pub fn verify_roundtrip(
    raw: &RawVolume,
    descriptor: &DatasetDescriptor,
    store: &dyn BlockStore,
    replica: &str,
) -> Result<VerifyReport> {
    let fill = check_shape(raw, descriptor)?;
    let codec = descriptor.replica(replica).ok_or_else(|| DescriptorError(format!("no replica '{replica}'")))?.codec;
    let pattern = descriptor.bit_pattern()?;
    let m = pattern.total_bits();
    let k = descriptor.block_bits;
    let block_len = 1usize << k;
    let nblocks = 1u64 << (m - k);

    let mut values = vec![fill; 1usize << m];
    let mut readable = vec![true; nblocks as usize];
    let mut corrupt_blocks = Vec::new();
    let mut missing_blocks = Vec::new();
    let key = BlockKey::new(&descriptor.id, &raw.field, raw.timestep, replica, 0);
    for b in 0..nblocks {
        let decoded = match store.get_block(&key.with_block(b)) {
            Ok(bytes) => unpack_f32_block(&bytes).map_err(|e| e.to_string()).and_then(|v| {
                if v.len() == block_len {
                    Ok(v)
                } else {
                    Err(format!("{} samples, expected {block_len}", v.len()))
                }
            }),
            Err(StoreError::NotFound(_)) => {
                missing_blocks.push(b);
                readable[b as usize] = false;
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        match decoded {
            Ok(v) => values[b as usize * block_len..(b as usize + 1) * block_len].copy_from_slice(&v),
            Err(reason) => {
                corrupt_blocks.push((b, reason));
                readable[b as usize] = false;
            }
        }
    }

    let expected = match codec {
        CodecSpec::Truncate(p) => codec::truncate_precision(&raw.data, p as u32)?,
        _ => raw.data.clone(),
    };
    let encoder = ZEncoder::new(&pattern);
    let parts = axis_parts(&encoder, &raw.extents);
    let mut visited = vec![false; 1usize << m];
    let mut recon = Vec::with_capacity(raw.len());
    let (mut i, mut mismatches, mut max_abs_error) = (0usize, 0u64, 0.0f64);
    for_each_z(&parts, |z| {
        let hz = hz_of_unchecked(z, m).1 as usize;
        visited[hz] = true;
        let got = values[hz];
        recon.push(got);
        if readable[hz >> k] && got.to_bits() != expected[i].to_bits() {
            mismatches += 1;
        }
        let err = (got as f64 - raw.data[i] as f64).abs();
        if err.is_finite() {
            max_abs_error = max_abs_error.max(err);
        }
        i += 1;
    });
    let phantom_mismatches = visited
        .iter()
        .enumerate()
        .filter(|(hz, v)| !**v && readable[hz >> k] && values[*hz].to_bits() != fill.to_bits())
        .count() as u64;
    Ok(VerifyReport {
        replica: replica.into(),
        samples_checked: raw.len() as u64,
        mismatches,
        phantom_mismatches,
        max_abs_error,
        psnr_db: codec::psnr(&raw.data, &recon).ok(),
        corrupt_blocks,
        missing_blocks,
    })
}
