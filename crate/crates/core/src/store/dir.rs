use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use super::{check_envelope, BlockKey, BlockStore, Egress, EgressMeter, Result, StoreError, StoreProfile};
use crate::dataset::{DatasetDescriptor, DESCRIPTOR_FILE};

/// One file per block: `{root}/{field}/t{timestep:08}/{replica}/b{index:012x}.bin`.
///
/// A directory store holds a single dataset; the dataset id of a key is not
/// part of the path.
#[derive(Debug)]
pub struct DirStore {
    root: PathBuf,
    read_only: bool,
    meter: EgressMeter,
    tmp_counter: AtomicU64,
}

impl DirStore {
    /// Opens (and creates if needed) a writable store.
    pub fn create(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(Self::at(root, false))
    }

    /// Opens an existing directory.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        if !root.is_dir() {
            return Err(StoreError::NotFound(format!("{} is not a directory", root.display())));
        }
        Ok(Self::at(root, false))
    }

    pub fn open_read_only(root: impl Into<PathBuf>) -> Result<Self> {
        let mut s = Self::open(root)?;
        s.read_only = true;
        Ok(s)
    }

    fn at(root: PathBuf, read_only: bool) -> Self {
        Self { root, read_only, meter: EgressMeter::default(), tmp_counter: AtomicU64::new(0) }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn replica_dir(&self, field: &str, timestep: u32, replica: &str) -> PathBuf {
        self.root.join(field).join(format!("t{timestep:08}")).join(replica)
    }

    pub fn block_path(&self, key: &BlockKey) -> PathBuf {
        self.replica_dir(&key.field, key.timestep, &key.replica).join(format!("b{:012x}.bin", key.block))
    }

    fn check_writable(&self) -> Result<()> {
        if self.read_only {
            return Err(StoreError::IoFailure(format!("{} is read-only", self.root.display())));
        }
        Ok(())
    }

    /// Writes to a temporary sibling, then renames over the target.
    fn write_atomic(&self, path: &Path, bytes: &[u8]) -> Result<()> {
        let dir = path.parent().expect("store paths have a parent");
        fs::create_dir_all(dir)?;
        let n = self.tmp_counter.fetch_add(1, Ordering::Relaxed);
        let tmp = dir.join(format!(".tmp.{}.{n}", std::process::id()));
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        drop(f);
        fs::rename(&tmp, path).inspect_err(|_| {
            let _ = fs::remove_file(&tmp);
        })?;
        Ok(())
    }

    /// Removes a block file if present.
    pub fn remove_block(&self, key: &BlockKey) -> Result<()> {
        self.check_writable()?;
        match fs::remove_file(self.block_path(key)) {
            Ok(()) => Ok(()),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(()),
            Err(e) => Err(e.into()),
        }
    }
}

pub(crate) fn parse_block_name(name: &str) -> Option<u64> {
    let hex = name.strip_prefix('b')?.strip_suffix(".bin")?;
    if hex.len() != 12 {
        return None;
    }
    u64::from_str_radix(hex, 16).ok()
}

impl BlockStore for DirStore {
    fn put_block(&self, key: &BlockKey, envelope: &[u8]) -> Result<()> {
        self.check_writable()?;
        check_envelope(envelope)?;
        self.write_atomic(&self.block_path(key), envelope)
    }

    fn get_block(&self, key: &BlockKey) -> Result<Vec<u8>> {
        match fs::read(self.block_path(key)) {
            Ok(bytes) => {
                self.meter.record(bytes.len() as u64);
                Ok(bytes)
            }
            Err(e) => {
                self.meter.record(0);
                match e.kind() {
                    std::io::ErrorKind::NotFound => Err(StoreError::NotFound(key.to_string())),
                    _ => Err(e.into()),
                }
            }
        }
    }

    fn list_blocks(&self, _dataset: &str, field: &str, timestep: u32, replica: &str) -> Result<Vec<u64>> {
        let dir = self.replica_dir(field, timestep, replica);
        let entries = match fs::read_dir(&dir) {
            Ok(e) => e,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(e.into()),
        };
        let mut out = Vec::new();
        for entry in entries {
            let entry = entry?;
            if let Some(b) = entry.file_name().to_str().and_then(parse_block_name) {
                out.push(b);
            }
        }
        out.sort_unstable();
        Ok(out)
    }

    fn put_descriptor(&self, descriptor: &DatasetDescriptor) -> Result<()> {
        self.check_writable()?;
        self.write_atomic(&self.root.join(DESCRIPTOR_FILE), descriptor.to_json().as_bytes())
    }

    fn get_descriptor(&self, dataset: &str) -> Result<DatasetDescriptor> {
        let path = self.root.join(DESCRIPTOR_FILE);
        let bytes = fs::read(&path)?;
        let d = DatasetDescriptor::from_json(&bytes)
            .map_err(|e| StoreError::IoFailure(format!("{}: {e}", path.display())))?;
        if !dataset.is_empty() && d.id != dataset {
            return Err(StoreError::NotFound(format!(
                "{} holds dataset '{}', not '{dataset}'",
                self.root.display(),
                d.id
            )));
        }
        Ok(d)
    }

    fn profile(&self) -> StoreProfile {
        StoreProfile::local()
    }

    fn egress(&self) -> Egress {
        self.meter.snapshot(0.0)
    }

    fn locator(&self) -> String {
        let abs = fs::canonicalize(&self.root).unwrap_or_else(|_| self.root.clone());
        format!("file://{}", abs.display())
    }
}
