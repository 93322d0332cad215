use std::collections::{BTreeMap, HashMap};
use std::sync::{Mutex, RwLock};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_envelope, BlockKey, BlockStore, Egress, EgressMeter, Result, StoreError, StoreProfile};
use crate::dataset::DatasetDescriptor;

/// Probabilities of injected request failures.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FaultConfig {
    /// Chance a get fails with `IoFailure` (connection dropped).
    pub drop_probability: f64,
    /// Chance a get fails with `Timeout`.
    pub timeout_probability: f64,
    pub seed: u64,
}

/// In-memory store that simulates a remote object store.
///
/// Each `get_block` blocks for `latency + len / bandwidth` when delay injection
/// is on. The profile is always reported to planners, so a store with
/// injection off still carries a cost model.
#[derive(Debug)]
pub struct MemStore {
    name: String,
    blocks: RwLock<BTreeMap<BlockKey, Vec<u8>>>,
    descriptors: RwLock<HashMap<String, DatasetDescriptor>>,
    profile: StoreProfile,
    inject_delay: bool,
    faults: FaultConfig,
    rng: Mutex<ChaCha8Rng>,
    read_only: bool,
    meter: EgressMeter,
}

impl Default for MemStore {
    fn default() -> Self {
        Self::new()
    }
}

impl MemStore {
    pub fn new() -> Self {
        Self::with_profile(StoreProfile::local())
    }

    /// Store that sleeps according to `profile` on every get.
    pub fn with_profile(profile: StoreProfile) -> Self {
        Self {
            name: "mem".into(),
            blocks: RwLock::default(),
            descriptors: RwLock::default(),
            profile,
            inject_delay: true,
            faults: FaultConfig::default(),
            rng: Mutex::new(ChaCha8Rng::seed_from_u64(0)),
            read_only: false,
            meter: EgressMeter::default(),
        }
    }

    /// Store that reports `profile` for cost estimation but never sleeps.
    pub fn with_cost_model(profile: StoreProfile) -> Self {
        Self { inject_delay: false, ..Self::with_profile(profile) }
    }

    pub fn with_faults(mut self, faults: FaultConfig) -> Self {
        self.rng = Mutex::new(ChaCha8Rng::seed_from_u64(faults.seed));
        self.faults = faults;
        self
    }

    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Freezes the store; later puts fail.
    pub fn into_read_only(mut self) -> Self {
        self.read_only = true;
        self
    }

    pub fn block_count(&self) -> usize {
        self.blocks.read().unwrap().len()
    }

    fn delay(&self, started: Instant, bytes: usize) {
        if !self.inject_delay {
            return;
        }
        let ms = self.profile.transfer_ms(1, bytes as u64);
        let target = Duration::from_secs_f64(ms / 1000.0);
        let elapsed = started.elapsed();
        if target > elapsed {
            std::thread::sleep(target - elapsed);
        }
    }

    fn draw_fault(&self) -> Option<StoreError> {
        let f = &self.faults;
        if f.drop_probability <= 0.0 && f.timeout_probability <= 0.0 {
            return None;
        }
        let roll: f64 = self.rng.lock().unwrap().random();
        if roll < f.timeout_probability {
            Some(StoreError::Timeout("injected timeout".into()))
        } else if roll < f.timeout_probability + f.drop_probability {
            Some(StoreError::IoFailure("injected connection drop".into()))
        } else {
            None
        }
    }
}

impl BlockStore for MemStore {
    fn put_block(&self, key: &BlockKey, envelope: &[u8]) -> Result<()> {
        if self.read_only {
            return Err(StoreError::IoFailure(format!("store '{}' is read-only", self.name)));
        }
        check_envelope(envelope)?;
        self.blocks.write().unwrap().insert(key.clone(), envelope.to_vec());
        Ok(())
    }

    fn get_block(&self, key: &BlockKey) -> Result<Vec<u8>> {
        let started = Instant::now();
        if let Some(err) = self.draw_fault() {
            self.delay(started, 0);
            self.meter.record(0);
            return Err(err);
        }
        let found = self.blocks.read().unwrap().get(key).cloned();
        match found {
            Some(bytes) => {
                self.delay(started, bytes.len());
                self.meter.record(bytes.len() as u64);
                Ok(bytes)
            }
            None => {
                self.delay(started, 0);
                self.meter.record(0);
                Err(StoreError::NotFound(key.to_string()))
            }
        }
    }

    fn list_blocks(&self, dataset: &str, field: &str, timestep: u32, replica: &str) -> Result<Vec<u64>> {
        let lo = BlockKey::new(dataset, field, timestep, replica, 0);
        let hi = BlockKey::new(dataset, field, timestep, replica, u64::MAX);
        Ok(self.blocks.read().unwrap().range(lo..=hi).map(|(k, _)| k.block).collect())
    }

    fn put_descriptor(&self, descriptor: &DatasetDescriptor) -> Result<()> {
        if self.read_only {
            return Err(StoreError::IoFailure(format!("store '{}' is read-only", self.name)));
        }
        self.descriptors.write().unwrap().insert(descriptor.id.clone(), descriptor.clone());
        Ok(())
    }

    fn get_descriptor(&self, dataset: &str) -> Result<DatasetDescriptor> {
        self.descriptors
            .read()
            .unwrap()
            .get(dataset)
            .cloned()
            .ok_or_else(|| StoreError::NotFound(format!("dataset '{dataset}'")))
    }

    fn profile(&self) -> StoreProfile {
        self.profile
    }

    fn egress(&self) -> Egress {
        self.meter.snapshot(self.profile.price_per_gib)
    }

    fn locator(&self) -> String {
        format!("mem://{}", self.name)
    }
}
