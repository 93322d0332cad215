//! Digital-object records: a persistent identifier bound to metadata, the
//! operations a handle supports and a locator the data can be reopened from.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{Dataset, FabricError, OpenOptions, Result};
use crate::dataset::{AxisDesc, DatasetDescriptor};
use crate::store::{BlockStore, DirStore, HttpStore};

/// Operations every dataset handle supports.
pub const OPERATIONS: &[&str] = &["plan", "read", "read_progressive", "fraction_in_range"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdoMetadata {
    pub dataset: String,
    pub axes: Vec<AxisDesc>,
    pub fields: Vec<String>,
    pub timesteps: u32,
    pub replicas: Vec<String>,
    pub provenance: String,
    pub created_unix: u64,
}

impl FdoMetadata {
    pub fn from_descriptor(d: &DatasetDescriptor) -> Self {
        Self {
            dataset: d.id.clone(),
            axes: d.axes.clone(),
            fields: d.fields.iter().map(|f| f.name.clone()).collect(),
            timesteps: d.timesteps,
            replicas: d.replicas.iter().map(|r| r.id.clone()).collect(),
            provenance: d.provenance.clone(),
            created_unix: d.created_unix,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Locator {
    /// `file:///...` or `http(s)://...` store root.
    pub store: String,
    pub dataset: String,
}

impl Locator {
    pub fn resolve(&self) -> Result<Arc<dyn BlockStore>> {
        if let Some(path) = self.store.strip_prefix("file://") {
            let s = DirStore::open(path).map_err(|e| FabricError::UnreachableStore(e.to_string()))?;
            Ok(Arc::new(s))
        } else if self.store.starts_with("http://") || self.store.starts_with("https://") {
            let s = HttpStore::new(&self.store).map_err(|e| FabricError::BadUri(e.to_string()))?;
            Ok(Arc::new(s))
        } else {
            Err(FabricError::BadUri(format!("cannot resolve locator '{}'", self.store)))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdoRecord {
    pub identifier: String,
    pub metadata: FdoMetadata,
    pub operations: Vec<String>,
    pub locator: Locator,
}

impl FdoRecord {
    pub fn new(identifier: impl Into<String>, descriptor: &DatasetDescriptor, store_locator: String) -> Self {
        Self {
            identifier: identifier.into(),
            metadata: FdoMetadata::from_descriptor(descriptor),
            operations: OPERATIONS.iter().map(|s| s.to_string()).collect(),
            locator: Locator { store: store_locator, dataset: descriptor.id.clone() },
        }
    }
}

/// Identifier-to-record map; identifiers are unique.
#[derive(Debug, Default)]
pub struct FdoRegistry {
    records: BTreeMap<String, FdoRecord>,
}

impl FdoRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, record: FdoRecord) -> Result<()> {
        if self.records.contains_key(&record.identifier) {
            return Err(FabricError::DuplicateIdentifier(record.identifier));
        }
        self.records.insert(record.identifier.clone(), record);
        Ok(())
    }

    pub fn get(&self, identifier: &str) -> Option<&FdoRecord> {
        self.records.get(identifier)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> impl Iterator<Item = &FdoRecord> {
        self.records.values()
    }

    /// Opens a handle through the record's locator.
    pub fn resolve(&self, identifier: &str, options: OpenOptions) -> Result<Dataset> {
        let record = self.get(identifier).ok_or_else(|| FabricError::UnknownIdentifier(identifier.into()))?;
        let store = record.locator.resolve()?;
        Dataset::from_store(identifier, store, &record.locator.dataset, options)
    }
}
