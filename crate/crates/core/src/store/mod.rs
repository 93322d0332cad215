//! Block storage: one trait, three backends.
//!
//! - [`DirStore`]: one file per block under a local directory.
//! - [`MemStore`]: in-memory, with injected latency, bandwidth and faults; it
//!   stands in for a remote object store.
//! - [`HttpStore`]: client for the block endpoints of the HTTP service.
//!
//! Every backend counts its egress (bytes returned by `get_block`, requests
//! issued) so planners can compare estimates against measured traffic.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::DatasetDescriptor;

mod dir;
mod http;
mod mem;

pub mod conformance;

pub(crate) use dir::parse_block_name;
pub use dir::DirStore;
pub use http::HttpStore;
pub use mem::{FaultConfig, MemStore};

pub const GIB: f64 = (1u64 << 30) as f64;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StoreError {
    #[error("not found: {0}")]
    NotFound(String),
    #[error("i/o failure: {0}")]
    IoFailure(String),
    #[error("timed out: {0}")]
    Timeout(String),
    #[error("malformed block envelope: {0}")]
    Malformed(String),
}

impl From<std::io::Error> for StoreError {
    fn from(e: std::io::Error) -> Self {
        match e.kind() {
            std::io::ErrorKind::NotFound => StoreError::NotFound(e.to_string()),
            std::io::ErrorKind::TimedOut => StoreError::Timeout(e.to_string()),
            _ => StoreError::IoFailure(e.to_string()),
        }
    }
}

pub type Result<T, E = StoreError> = std::result::Result<T, E>;

/// Address of one stored block.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BlockKey {
    pub dataset: String,
    pub field: String,
    pub timestep: u32,
    pub replica: String,
    pub block: u64,
}

impl BlockKey {
    pub fn new(
        dataset: impl Into<String>,
        field: impl Into<String>,
        timestep: u32,
        replica: impl Into<String>,
        block: u64,
    ) -> Self {
        Self { dataset: dataset.into(), field: field.into(), timestep, replica: replica.into(), block }
    }

    pub fn with_block(&self, block: u64) -> Self {
        Self { block, ..self.clone() }
    }
}

impl fmt::Display for BlockKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/t{}/{}/b{}", self.dataset, self.field, self.timestep, self.replica, self.block)
    }
}

/// Network cost model of a store. All zero for local storage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StoreProfile {
    /// Fixed per-request latency in milliseconds.
    pub latency_ms: f64,
    /// Transfer rate in bytes per second; 0 means unlimited.
    pub bandwidth: f64,
    /// Cost units charged per GiB of egress.
    pub price_per_gib: f64,
}

impl StoreProfile {
    pub fn local() -> Self {
        Self::default()
    }

    pub fn remote(latency_ms: f64, bandwidth: f64, price_per_gib: f64) -> Self {
        Self { latency_ms, bandwidth, price_per_gib }
    }

    pub fn is_valid(&self) -> bool {
        [self.latency_ms, self.bandwidth, self.price_per_gib].iter().all(|v| v.is_finite() && *v >= 0.0)
    }

    /// Estimated wall time of `requests` sequential fetches totalling `bytes`.
    pub fn transfer_ms(&self, requests: u64, bytes: u64) -> f64 {
        let mut ms = requests as f64 * self.latency_ms;
        if self.bandwidth > 0.0 {
            ms += bytes as f64 / self.bandwidth * 1000.0;
        }
        ms
    }

    pub fn cost(&self, bytes: u64) -> f64 {
        bytes as f64 / GIB * self.price_per_gib
    }
}

/// Snapshot of egress counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Egress {
    pub bytes: u64,
    pub requests: u64,
    pub cost_units: f64,
}

/// Monotone egress counters shared by a store's readers.
#[derive(Debug, Default)]
pub struct EgressMeter {
    bytes: AtomicU64,
    requests: AtomicU64,
}

impl EgressMeter {
    pub fn record(&self, bytes: u64) {
        self.requests.fetch_add(1, Ordering::Relaxed);
        self.bytes.fetch_add(bytes, Ordering::Relaxed);
    }

    pub fn snapshot(&self, price_per_gib: f64) -> Egress {
        let bytes = self.bytes.load(Ordering::Relaxed);
        Egress {
            bytes,
            requests: self.requests.load(Ordering::Relaxed),
            cost_units: bytes as f64 / GIB * price_per_gib,
        }
    }
}

pub trait BlockStore: Send + Sync + fmt::Debug {
    /// Stores an envelope; last writer wins.
    fn put_block(&self, key: &BlockKey, envelope: &[u8]) -> Result<()>;

    fn get_block(&self, key: &BlockKey) -> Result<Vec<u8>>;

    /// Stored block indices, ascending.
    fn list_blocks(&self, dataset: &str, field: &str, timestep: u32, replica: &str) -> Result<Vec<u64>>;

    fn put_descriptor(&self, descriptor: &DatasetDescriptor) -> Result<()>;

    fn get_descriptor(&self, dataset: &str) -> Result<DatasetDescriptor>;

    fn profile(&self) -> StoreProfile;

    /// Egress counted since the store was created.
    fn egress(&self) -> Egress;

    /// Location string a client can reopen the store from.
    fn locator(&self) -> String;
}

pub(crate) fn check_envelope(envelope: &[u8]) -> Result<()> {
    crate::codec::EnvelopeHeader::parse(envelope).map(|_| ()).map_err(|e| StoreError::Malformed(e.to_string()))
}

/// Copies every block of every replica of `descriptor` from `src` to `dst`,
/// then the descriptor itself. Returns the number of blocks copied.
pub fn copy_dataset(descriptor: &DatasetDescriptor, src: &dyn BlockStore, dst: &dyn BlockStore) -> Result<u64> {
    let mut copied = 0;
    for replica in &descriptor.replicas {
        for field in &descriptor.fields {
            for t in 0..descriptor.timesteps {
                for b in src.list_blocks(&descriptor.id, &field.name, t, &replica.id)? {
                    let key = BlockKey::new(&descriptor.id, &field.name, t, &replica.id, b);
                    dst.put_block(&key, &src.get_block(&key)?)?;
                    copied += 1;
                }
            }
        }
    }
    dst.put_descriptor(descriptor)?;
    Ok(copied)
}
