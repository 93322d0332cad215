use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use serde::Serialize;

use super::uri::{DatasetUri, Location, DEFAULT_CACHE_BYTES};
use super::{plan, BlockCache, Constraints, FabricError, FdoRecord, Plan, PlanOutcome, Query, Result};
use crate::codec::unpack_f32_block;
use crate::dataset::{DatasetDescriptor, DESCRIPTOR_FILE};
use crate::index::{for_each_z, hz_of_unchecked, level_grid, BitPattern, ZEncoder};
use crate::store::{BlockKey, BlockStore, DirStore, Egress, HttpStore, StoreError, StoreProfile};

// Z contribution marking "no source sample"; OR-ing keeps it all ones, which
// no real address reaches.
const NO_SAMPLE: u64 = u64::MAX;

#[derive(Debug, Clone, PartialEq)]
pub struct CacheConfig {
    pub dir: PathBuf,
    pub capacity_bytes: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct OpenOptions {
    pub cache: Option<CacheConfig>,
    /// Extra attempts after a timeout or dropped connection.
    pub retries: u32,
}

/// Counters of one read.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ReadStats {
    pub blocks: u64,
    /// Requests sent to the backing store, retries included.
    pub requests: u64,
    pub retries: u64,
    /// Envelope bytes received from the backing store.
    pub wire_bytes: u64,
    pub cache_hits: u64,
    pub cache_misses: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReadResult {
    pub plan: Plan,
    /// Row-major over the declared axes, `plan.counts` per axis.
    pub values: Vec<f32>,
    pub stats: ReadStats,
    pub fill: f32,
}

/// One step of a progressive read: the final grid filled from all levels
/// up to `level`.
#[derive(Debug, Clone, PartialEq)]
pub struct Emission {
    pub level: u32,
    pub final_level: u32,
    pub counts: Vec<u64>,
    pub values: Vec<f32>,
    /// Cumulative for the read so far.
    pub stats: ReadStats,
    pub elapsed_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InRange {
    pub percent: f64,
    pub in_range: u64,
    pub counted: u64,
    pub excluded_fill: u64,
    pub level: u32,
}

/// Open dataset: descriptor, backing store and optional local cache.
#[derive(Debug)]
pub struct Dataset {
    identifier: String,
    descriptor: DatasetDescriptor,
    store: Arc<dyn BlockStore>,
    cache: Option<BlockCache>,
    retries: u32,
    pattern: BitPattern,
    encoder: ZEncoder,
}

impl Dataset {
    pub fn open(uri: &str) -> Result<Self> {
        let parsed = DatasetUri::parse(uri)?;
        let options = OpenOptions {
            cache: parsed.cached.then(|| CacheConfig {
                dir: parsed.resolved_cache_dir(),
                capacity_bytes: parsed.cache_bytes.unwrap_or(DEFAULT_CACHE_BYTES),
            }),
            retries: parsed.retries.unwrap_or(0),
        };
        match parsed.location() {
            Location::Directory(root) => {
                let store = DirStore::open_read_only(root).map_err(|e| FabricError::UnreachableStore(e.to_string()))?;
                let path = root.join(DESCRIPTOR_FILE);
                let bytes = std::fs::read(&path)
                    .map_err(|e| FabricError::UnreachableStore(format!("{}: {e}", path.display())))?;
                let descriptor = DatasetDescriptor::from_json(&bytes)
                    .map_err(|e| FabricError::BadDescriptor(format!("{}: {e}", path.display())))?;
                Self::with_descriptor(uri.trim(), descriptor, Arc::new(store), options)
            }
            Location::Http { base, dataset } => {
                let profile = StoreProfile::remote(
                    parsed.latency_ms.unwrap_or(0.0),
                    parsed.bandwidth.unwrap_or(0.0),
                    parsed.price_per_gib.unwrap_or(0.0),
                );
                let store = HttpStore::new(base).map_err(|e| FabricError::BadUri(e.to_string()))?;
                Self::from_store(uri.trim(), Arc::new(store.with_profile(profile)), dataset, options)
            }
        }
    }

    /// Loads the descriptor of `dataset` from `store`.
    pub fn from_store(
        identifier: impl Into<String>,
        store: Arc<dyn BlockStore>,
        dataset: &str,
        options: OpenOptions,
    ) -> Result<Self> {
        let descriptor = store.get_descriptor(dataset).map_err(|e| match e {
            StoreError::Malformed(m) => FabricError::BadDescriptor(m),
            other => FabricError::UnreachableStore(other.to_string()),
        })?;
        Self::with_descriptor(identifier, descriptor, store, options)
    }

    pub fn with_descriptor(
        identifier: impl Into<String>,
        descriptor: DatasetDescriptor,
        store: Arc<dyn BlockStore>,
        options: OpenOptions,
    ) -> Result<Self> {
        descriptor.validate().map_err(|e| FabricError::BadDescriptor(e.to_string()))?;
        let pattern = descriptor.bit_pattern().map_err(|e| FabricError::BadDescriptor(e.to_string()))?;
        let cache = match &options.cache {
            Some(c) => Some(BlockCache::open(&c.dir, &descriptor.id, c.capacity_bytes)?),
            None => None,
        };
        Ok(Self {
            identifier: identifier.into(),
            encoder: ZEncoder::new(&pattern),
            pattern,
            descriptor,
            store,
            cache,
            retries: options.retries,
        })
    }

    pub fn identifier(&self) -> &str {
        &self.identifier
    }

    pub fn descriptor(&self) -> &DatasetDescriptor {
        &self.descriptor
    }

    pub fn store(&self) -> &Arc<dyn BlockStore> {
        &self.store
    }

    pub fn cache(&self) -> Option<&BlockCache> {
        self.cache.as_ref()
    }

    pub fn egress(&self) -> Egress {
        self.store.egress()
    }

    pub fn fdo(&self) -> FdoRecord {
        FdoRecord::new(&self.identifier, &self.descriptor, self.store.locator())
    }

    pub fn plan(&self, query: &Query, constraints: &Constraints) -> Result<PlanOutcome> {
        plan::plan(&self.descriptor, self.store.profile(), query, constraints)
    }

    pub fn read(&self, query: &Query, constraints: &Constraints) -> Result<ReadResult> {
        let plan = self.plan(query, constraints)?.into_result()?;
        self.read_plan(plan)
    }

    pub fn read_plan(&self, plan: Plan) -> Result<ReadResult> {
        let mut stats = ReadStats::default();
        let mut table = vec![None; plan.blocks.len()];
        self.fetch_range(&plan, 0..plan.blocks.len(), &mut table, &mut stats)?;
        let values = self.emit(&plan, &table, plan.level);
        Ok(ReadResult { values, stats, fill: self.fill(&plan.field), plan })
    }

    /// Coarse-to-fine read; each emission covers the final grid. Dropping the
    /// iterator cancels the remaining fetches.
    pub fn read_progressive(&self, query: &Query, constraints: &Constraints) -> Result<Progressive<'_>> {
        let plan = self.plan(query, constraints)?.into_result()?;
        Ok(Progressive {
            dataset: self,
            table: vec![None; plan.blocks.len()],
            plan,
            fetched: 0,
            next_level: 0,
            stats: ReadStats::default(),
            failed: false,
            started: Instant::now(),
        })
    }

    /// Percentage of valid samples in `[lo, hi]`; fill-valued samples are excluded.
    pub fn fraction_in_range(&self, query: &Query, lo: f32, hi: f32) -> Result<InRange> {
        if lo.is_nan() || hi.is_nan() || lo > hi {
            return Err(FabricError::BadQuery(format!("bad range [{lo}, {hi}]")));
        }
        let r = self.read(query, &Constraints::default())?;
        let fill = r.fill.to_bits();
        let (mut counted, mut in_range, mut excluded_fill) = (0u64, 0u64, 0u64);
        for v in &r.values {
            if v.to_bits() == fill {
                excluded_fill += 1;
                continue;
            }
            counted += 1;
            if (lo..=hi).contains(v) {
                in_range += 1;
            }
        }
        if counted == 0 {
            return Err(FabricError::EmptySelection);
        }
        Ok(InRange {
            percent: 100.0 * in_range as f64 / counted as f64,
            in_range,
            counted,
            excluded_fill,
            level: r.plan.level,
        })
    }

    /// Fetches and decodes one block through the cache, if any.
    pub fn fetch_block(&self, key: &BlockKey, stats: &mut ReadStats) -> Result<Vec<f32>> {
        stats.blocks += 1;
        let bytes = match &self.cache {
            Some(cache) => {
                let (bytes, hit) = cache.get_or_fetch(key, || self.get_with_retry(key, stats))?;
                if hit {
                    stats.cache_hits += 1;
                } else {
                    stats.cache_misses += 1;
                }
                bytes
            }
            None => self.get_with_retry(key, stats)?,
        };
        let corrupt = |reason: String| FabricError::CorruptBlock { key: key.to_string(), reason };
        let values = unpack_f32_block(&bytes).map_err(|e| corrupt(e.to_string()))?;
        let expected = 1usize << self.descriptor.block_bits;
        if values.len() != expected {
            return Err(corrupt(format!("{} samples, expected {expected}", values.len())));
        }
        Ok(values)
    }

    fn get_with_retry(&self, key: &BlockKey, stats: &mut ReadStats) -> Result<Vec<u8>> {
        let mut attempt = 0;
        loop {
            stats.requests += 1;
            match self.store.get_block(key) {
                Ok(bytes) => {
                    stats.wire_bytes += bytes.len() as u64;
                    return Ok(bytes);
                }
                Err(StoreError::Timeout(_) | StoreError::IoFailure(_)) if attempt < self.retries => {
                    attempt += 1;
                    stats.retries += 1;
                }
                Err(e) => return Err(e.into()),
            }
        }
    }

    fn fill(&self, field: &str) -> f32 {
        self.descriptor.field(field).map(|f| f.fill).unwrap_or(0.0)
    }

    fn fetch_range(
        &self,
        plan: &Plan,
        range: std::ops::Range<usize>,
        table: &mut [Option<Vec<f32>>],
        stats: &mut ReadStats,
    ) -> Result<()> {
        let key = BlockKey::new(&self.descriptor.id, &plan.field, plan.timestep, &plan.replica, 0);
        for i in range {
            table[i] = Some(self.fetch_block(&key.with_block(plan.blocks[i]), stats)?);
        }
        Ok(())
    }

    /// Values on the plan's grid, each taken from the nearest level-`level`
    /// sample at or below it inside the box (or the next one up when the
    /// snapped coordinate leaves the box).
    fn emit(&self, plan: &Plan, table: &[Option<Vec<f32>>], level: u32) -> Vec<f32> {
        let m = self.pattern.total_bits();
        let k = self.descriptor.block_bits;
        let mask = (1u64 << k) - 1;
        let fine = level_grid(&self.pattern, plan.level).expect("planned level is valid");
        let coarse = level_grid(&self.pattern, level).expect("level <= planned level");
        let parts: Vec<Vec<u64>> = plan
            .region
            .ranges
            .iter()
            .enumerate()
            .map(|(a, r)| {
                let (first, count) = fine.axis_span(a, r);
                let (s, sc) = (fine.strides[a], coarse.strides[a]);
                (0..count)
                    .map(|i| {
                        let snapped = (first + i * s) / sc * sc;
                        let src =
                            if snapped >= r.start { Some(snapped) } else { Some(snapped + sc).filter(|c| *c < r.end) };
                        src.map_or(NO_SAMPLE, |c| self.encoder.axis_part(a, c))
                    })
                    .collect()
            })
            .collect();
        let fill = self.fill(&plan.field);
        let mut out = Vec::with_capacity(plan.samples() as usize);
        let mut last = (u64::MAX, 0usize);
        for_each_z(&parts, |z| {
            if z == NO_SAMPLE {
                out.push(fill);
                return;
            }
            let hz = hz_of_unchecked(z, m).1;
            let b = hz >> k;
            if b != last.0 {
                last = (b, plan.blocks.binary_search(&b).expect("sample block is planned"));
            }
            let block = table[last.1].as_ref().expect("block fetched before emission");
            out.push(block[(hz & mask) as usize]);
        });
        out
    }
}

pub struct Progressive<'a> {
    dataset: &'a Dataset,
    plan: Plan,
    table: Vec<Option<Vec<f32>>>,
    fetched: usize,
    next_level: u32,
    stats: ReadStats,
    failed: bool,
    started: Instant,
}

impl Progressive<'_> {
    pub fn plan(&self) -> &Plan {
        &self.plan
    }
}

impl Iterator for Progressive<'_> {
    type Item = Result<Emission>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed || self.next_level > self.plan.level {
            return None;
        }
        let level = self.next_level;
        // every sample of level <= `level` has an address below 2^level
        let last_block = ((1u64 << level) - 1) >> self.dataset.descriptor.block_bits;
        let end = self.plan.blocks.partition_point(|b| *b <= last_block);
        if let Err(e) = self.dataset.fetch_range(&self.plan, self.fetched..end, &mut self.table, &mut self.stats) {
            self.failed = true;
            return Some(Err(e));
        }
        self.fetched = end;
        self.next_level += 1;
        Some(Ok(Emission {
            level,
            final_level: self.plan.level,
            counts: self.plan.counts.clone(),
            values: self.dataset.emit(&self.plan, &self.table, level),
            stats: self.stats,
            elapsed_s: self.started.elapsed().as_secs_f64(),
        }))
    }
}
