//! Dataset descriptor: grid geometry, bit pattern, fields, timesteps, block
//! size and the replicas stored for it.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::CodecSpec;
use crate::index::{self, BitPattern, MAX_AXES};

/// File name of the descriptor at the root of a directory store.
pub const DESCRIPTOR_FILE: &str = "dataset.json";

#[derive(Debug, Error, Clone, PartialEq)]
#[error("bad descriptor: {0}")]
pub struct DescriptorError(pub String);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisDesc {
    pub name: char,
    pub extent: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldDesc {
    pub name: String,
    /// Value of invalid cells (land masks, padding).
    #[serde(default)]
    pub fill: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicaDesc {
    pub id: String,
    pub codec: CodecSpec,
    /// Largest envelope written for this replica; bounds the wire size of any block.
    pub max_block_bytes: u64,
}

/// Geographic bounds of the grid, for clients that offer region presets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoExtent {
    pub lon: [f64; 2],
    pub lat: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetDescriptor {
    pub id: String,
    /// Axes in declaration order; sample arrays are row-major over this order
    /// (last axis fastest).
    pub axes: Vec<AxisDesc>,
    /// Bit pattern, MSB first.
    pub pattern: String,
    /// Each block holds `2^block_bits` consecutive HZ addresses.
    pub block_bits: u32,
    pub fields: Vec<FieldDesc>,
    pub timesteps: u32,
    #[serde(default)]
    pub replicas: Vec<ReplicaDesc>,
    #[serde(default)]
    pub provenance: String,
    #[serde(default)]
    pub created_unix: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geo: Option<GeoExtent>,
}

impl DatasetDescriptor {
    /// Descriptor with the default round-robin pattern for `axes`.
    pub fn new(
        id: impl Into<String>,
        axes: &[(char, u64)],
        fields: Vec<FieldDesc>,
        timesteps: u32,
        block_bits: u32,
    ) -> Result<Self, DescriptorError> {
        let bits: Vec<(char, u32)> = axes.iter().map(|(a, e)| (*a, index::bits_for_extent(*e))).collect();
        let pattern = BitPattern::round_robin(&bits).map_err(|e| DescriptorError(e.to_string()))?;
        let created_unix =
            std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        let d = Self {
            id: id.into(),
            axes: axes.iter().map(|(name, extent)| AxisDesc { name: *name, extent: *extent }).collect(),
            pattern: pattern.to_string(),
            block_bits,
            fields,
            timesteps,
            replicas: Vec::new(),
            provenance: String::new(),
            created_unix,
            geo: None,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<(), DescriptorError> {
        let err = |m: String| Err(DescriptorError(m));
        if self.id.is_empty() || self.id.contains(['/', '\\', '?', '#', '&']) {
            return err(format!("invalid dataset id '{}'", self.id));
        }
        if self.axes.is_empty() || self.axes.len() > MAX_AXES {
            return err(format!("expected 1..={MAX_AXES} axes"));
        }
        if self.axes.iter().any(|a| a.extent == 0) {
            return err("axis extents must be >= 1".into());
        }
        let pattern = self.bit_pattern()?;
        for (i, a) in self.axes.iter().enumerate() {
            let need = index::bits_for_extent(a.extent);
            if pattern.axis_bits(i) != need {
                return err(format!(
                    "pattern gives axis '{}' {} bits, extent {} needs {need}",
                    a.name,
                    pattern.axis_bits(i),
                    a.extent
                ));
            }
        }
        if self.block_bits > pattern.total_bits() {
            return err(format!("block_bits {} exceeds total bits {}", self.block_bits, pattern.total_bits()));
        }
        if self.fields.is_empty() {
            return err("at least one field is required".into());
        }
        for (i, f) in self.fields.iter().enumerate() {
            if f.name.is_empty() || self.fields[..i].iter().any(|g| g.name == f.name) {
                return err(format!("invalid or duplicate field '{}'", f.name));
            }
            if !f.fill.is_finite() {
                return err(format!("fill of field '{}' must be finite", f.name));
            }
        }
        if self.timesteps == 0 {
            return err("timesteps must be >= 1".into());
        }
        for (i, r) in self.replicas.iter().enumerate() {
            if r.id != r.codec.to_string() {
                return err(format!("replica id '{}' does not name codec {}", r.id, r.codec));
            }
            if self.replicas[..i].iter().any(|s| s.id == r.id) {
                return err(format!("duplicate replica '{}'", r.id));
            }
        }
        Ok(())
    }

    pub fn axis_names(&self) -> Vec<char> {
        self.axes.iter().map(|a| a.name).collect()
    }

    pub fn extents(&self) -> Vec<u64> {
        self.axes.iter().map(|a| a.extent).collect()
    }

    pub fn bit_pattern(&self) -> Result<BitPattern, DescriptorError> {
        BitPattern::new(&self.axis_names(), &self.pattern).map_err(|e| DescriptorError(e.to_string()))
    }

    /// Total address bits `m`.
    pub fn total_bits(&self) -> u32 {
        self.pattern.chars().count() as u32
    }

    pub fn block_count(&self) -> u64 {
        1u64 << (self.total_bits() - self.block_bits)
    }

    pub fn samples_per_block(&self) -> u64 {
        1u64 << self.block_bits
    }

    pub fn field(&self, name: &str) -> Option<&FieldDesc> {
        self.fields.iter().find(|f| f.name == name)
    }

    pub fn replica(&self, id: &str) -> Option<&ReplicaDesc> {
        self.replicas.iter().find(|r| r.id == id)
    }

    pub fn axis_index(&self, name: char) -> Option<usize> {
        self.axes.iter().position(|a| a.name == name)
    }

    /// Registers a replica or raises its block-size bound.
    pub fn record_replica(&mut self, codec: CodecSpec, max_block_bytes: u64) {
        let id = codec.to_string();
        match self.replicas.iter_mut().find(|r| r.id == id) {
            Some(r) => r.max_block_bytes = r.max_block_bytes.max(max_block_bytes),
            None => self.replicas.push(ReplicaDesc { id, codec, max_block_bytes }),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("descriptor serializes")
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, DescriptorError> {
        let d: Self = serde_json::from_slice(bytes).map_err(|e| DescriptorError(e.to_string()))?;
        d.validate()?;
        Ok(d)
    }
}
