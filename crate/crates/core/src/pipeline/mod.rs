//! Conversion of raw arrays into blocked HZ datasets, derived replicas,
//! round-trip verification and the storage studies.

mod bench;
mod ingest;
mod raw;
mod synth;

use thiserror::Error;

use crate::codec::CodecError;
use crate::dataset::DescriptorError;
use crate::index::IndexError;
use crate::store::StoreError;

pub use bench::{
    bench_blocksize, bench_locations, write_blocksize_csv, write_locations_csv, BlockSizeRow, LocationRow,
    LocationSetup,
};
pub use ingest::{
    ingest, ingest_with, make_replica, replica_stats, verify_roundtrip, IngestOptions, IngestReport, ReplicaStats,
    VerifyReport,
};
pub use raw::{RawVolume, DTYPE_F32, RAW_HEADER_LEN, RAW_MAGIC};
pub use synth::{synth_volume, SynthKind};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("io: {0}")]
    Io(String),
    #[error("bad raw file: {0}")]
    BadRaw(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("replica '{0}' already exists")]
    ReplicaExists(String),
    #[error("no full-precision replica to derive from")]
    MissingSource,
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Descriptor(#[from] DescriptorError),
    #[error(transparent)]
    Fabric(#[from] Box<crate::fabric::FabricError>),
}
