//! Query fabric: dataset handles opened from URIs, constraint-aware planning,
//! full and progressive reads, a persistent block cache and simple analytics.

mod cache;
mod fdo;
mod plan;
mod read;
mod uri;

use thiserror::Error;

use crate::store::StoreError;

pub use cache::{BlockCache, CacheStats};
pub use fdo::{FdoMetadata, FdoRecord, FdoRegistry, Locator, OPERATIONS};
pub use plan::{
    choose_replica, plan, ConstraintKind, Constraints, Estimate, Plan, PlanOutcome, Query, Refusal, Relaxation,
};
pub use read::{CacheConfig, Dataset, Emission, InRange, OpenOptions, Progressive, ReadResult, ReadStats};
pub use uri::{DatasetUri, Location, CACHE_DIR_ENV, DEFAULT_CACHE_BYTES};

#[derive(Debug, Error)]
pub enum FabricError {
    #[error("bad dataset uri: {0}")]
    BadUri(String),
    #[error("store unreachable: {0}")]
    UnreachableStore(String),
    #[error("bad dataset descriptor: {0}")]
    BadDescriptor(String),
    #[error("bad query: {0}")]
    BadQuery(String),
    #[error("{0}")]
    Refused(Box<Refusal>),
    #[error("block {key} is corrupt: {reason}")]
    CorruptBlock { key: String, reason: String },
    #[error("selection contains no valid samples")]
    EmptySelection,
    #[error("identifier '{0}' is already registered")]
    DuplicateIdentifier(String),
    #[error("unknown identifier '{0}'")]
    UnknownIdentifier(String),
    #[error("cache: {0}")]
    Cache(String),
    #[error(transparent)]
    Store(#[from] StoreError),
}

pub type Result<T, E = FabricError> = std::result::Result<T, E>;
