//! Progressive multiresolution access to gridded volumes.
//!
//! Samples are laid out in hierarchical Z (HZ) order so that every prefix of
//! the address space is a complete coarse version of the volume. Addresses are
//! grouped into fixed-size blocks, each stored as one checksummed object in a
//! [`store::BlockStore`]. The [`fabric`] plans reads against byte, request,
//! cost and latency limits, fetches only the blocks a query touches and can
//! stream results coarse to fine.
//!
//! ```
//! use idxfabric::prelude::*;
//!
//! let raw = synth_volume(&[16, 16, 16], 1, SynthKind::Smooth);
//! let mut desc = DatasetDescriptor::new(
//!     "demo",
//!     &[('x', 16), ('y', 16), ('z', 16)],
//!     vec![FieldDesc { name: "value".into(), fill: 0.0 }],
//!     1,
//!     8,
//! )
//! .unwrap();
//! let store = std::sync::Arc::new(MemStore::new());
//! ingest(&raw, &mut desc, &*store, CodecSpec::Lossless).unwrap();
//!
//! let ds = Dataset::with_descriptor("demo", desc, store, OpenOptions::default()).unwrap();
//! let limits = Constraints { max_bytes: Some(3000), ..Default::default() };
//! let r = ds.read(&Query::new("value"), &limits).unwrap();
//! assert_eq!(r.plan.level, 9);
//! assert_eq!(r.values.len(), 512);
//! ```

pub mod codec;
pub mod dataset;
pub mod fabric;
pub mod index;
pub mod pipeline;
pub mod store;

pub use codec::CodecSpec;
pub use dataset::{DatasetDescriptor, FieldDesc};
pub use fabric::{Constraints, Dataset, FabricError, OpenOptions, Query};
pub use index::{BitPattern, Region};

pub mod prelude {
    pub use crate::codec::{CodecSpec, CompressionFactor};
    pub use crate::dataset::{DatasetDescriptor, FieldDesc};
    pub use crate::fabric::{Constraints, Dataset, FabricError, OpenOptions, PlanOutcome, Query, ReadResult};
    pub use crate::index::{BitPattern, LevelGrid, Region};
    pub use crate::pipeline::{ingest, make_replica, synth_volume, RawVolume, SynthKind};
    pub use crate::store::{BlockKey, BlockStore, DirStore, MemStore, StoreProfile};
}
