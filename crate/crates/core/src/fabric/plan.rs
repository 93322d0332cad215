//! Constraint-aware query planning.
//!
//! A level is costed by two byte counts. `result_bytes` is the float32 payload
//! of the lattice points in the box and is what `max_bytes` limits. The wire
//! estimate is `blocks * max_block_bytes` of the chosen replica, an upper bound
//! on what a read transfers, and drives request, cost and latency limits.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::{FabricError, Result};
use crate::codec::CodecSpec;
use crate::dataset::{DatasetDescriptor, ReplicaDesc};
use crate::index::{collect_blocks, lattice_parts, level_grid, BitPattern, Region, ZEncoder};
use crate::store::StoreProfile;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub field: String,
    pub timestep: u32,
    /// `None` selects the whole domain.
    pub region: Option<Region>,
    /// `None` selects the finest level.
    pub level: Option<u32>,
    /// Required mantissa-plus-exponent bits, 1..=32.
    pub precision: u32,
}

impl Query {
    pub fn new(field: impl Into<String>) -> Self {
        Self { field: field.into(), timestep: 0, region: None, level: None, precision: 32 }
    }

    pub fn at_timestep(mut self, t: u32) -> Self {
        self.timestep = t;
        self
    }

    pub fn with_region(mut self, region: Region) -> Self {
        self.region = Some(region);
        self
    }

    pub fn at_level(mut self, level: u32) -> Self {
        self.level = Some(level);
        self
    }

    pub fn with_precision(mut self, bits: u32) -> Self {
        self.precision = bits;
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Constraints {
    pub max_bytes: Option<u64>,
    pub max_requests: Option<u64>,
    pub max_cost_units: Option<f64>,
    pub max_latency_ms: Option<f64>,
    /// Coarsest acceptable level.
    #[serde(default)]
    pub min_level: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintKind {
    MaxBytes,
    MaxRequests,
    MaxCostUnits,
    MaxLatencyMs,
}

impl fmt::Display for ConstraintKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::MaxBytes => "max_bytes",
            Self::MaxRequests => "max_requests",
            Self::MaxCostUnits => "max_cost_units",
            Self::MaxLatencyMs => "max_latency_ms",
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub result_bytes: u64,
    pub wire_bytes: u64,
    pub requests: u64,
    pub cost_units: f64,
    pub latency_ms: f64,
}

impl Estimate {
    fn violations(&self, c: &Constraints) -> Vec<ConstraintKind> {
        let mut v = Vec::new();
        if c.max_bytes.is_some_and(|m| self.result_bytes > m) {
            v.push(ConstraintKind::MaxBytes);
        }
        if c.max_requests.is_some_and(|m| self.requests > m) {
            v.push(ConstraintKind::MaxRequests);
        }
        if c.max_cost_units.is_some_and(|m| self.cost_units > m) {
            v.push(ConstraintKind::MaxCostUnits);
        }
        if c.max_latency_ms.is_some_and(|m| self.latency_ms > m) {
            v.push(ConstraintKind::MaxLatencyMs);
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub dataset: String,
    pub field: String,
    pub timestep: u32,
    pub region: Region,
    pub level: u32,
    pub requested_level: u32,
    pub replica: String,
    pub codec: CodecSpec,
    /// Precision of the chosen replica.
    pub precision: u32,
    /// Set when no replica meets the requested precision.
    pub downgraded: bool,
    /// Lattice points per axis in the result.
    pub counts: Vec<u64>,
    /// Block indices to fetch, ascending.
    pub blocks: Vec<u64>,
    pub estimate: Estimate,
}

impl Plan {
    pub fn samples(&self) -> u64 {
        self.counts.iter().product()
    }
}

/// Limits that would let the refused query plan at its minimum level.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Relaxation {
    pub max_bytes: Option<u64>,
    pub max_requests: Option<u64>,
    pub max_cost_units: Option<f64>,
    pub max_latency_ms: Option<f64>,
}

impl Relaxation {
    pub fn apply(&self, c: &Constraints) -> Constraints {
        Constraints {
            max_bytes: self.max_bytes.or(c.max_bytes),
            max_requests: self.max_requests.or(c.max_requests),
            max_cost_units: self.max_cost_units.or(c.max_cost_units),
            max_latency_ms: self.max_latency_ms.or(c.max_latency_ms),
            min_level: c.min_level,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Refusal {
    /// Constraints the minimum level breaks.
    pub violated: Vec<ConstraintKind>,
    pub requested_level: u32,
    pub min_level: u32,
    pub estimate_at_min_level: Estimate,
    /// Finest level below `min_level` that satisfies every constraint.
    pub feasible_level_below_floor: Option<u32>,
    pub hint: Relaxation,
}

impl fmt::Display for Refusal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<String> = self.violated.iter().map(|v| v.to_string()).collect();
        write!(
            f,
            "no level in [{}, {}] satisfies the constraints; level {} violates {}",
            self.min_level,
            self.requested_level,
            self.min_level,
            names.join(", ")
        )?;
        let e = &self.estimate_at_min_level;
        for v in &self.violated {
            match v {
                ConstraintKind::MaxBytes => write!(f, "; needs max_bytes >= {}", e.result_bytes)?,
                ConstraintKind::MaxRequests => write!(f, "; needs max_requests >= {}", e.requests)?,
                ConstraintKind::MaxCostUnits => write!(f, "; needs max_cost_units >= {}", e.cost_units)?,
                ConstraintKind::MaxLatencyMs => write!(f, "; needs max_latency_ms >= {}", e.latency_ms)?,
            }
        }
        if let Some(l) = self.feasible_level_below_floor {
            write!(f, "; level {l} would fit")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PlanOutcome {
    Ready(Plan),
    Refused(Refusal),
}

impl PlanOutcome {
    pub fn into_result(self) -> Result<Plan> {
        match self {
            Self::Ready(p) => Ok(p),
            Self::Refused(r) => Err(FabricError::Refused(Box::new(r))),
        }
    }
}

/// Cheapest replica meeting `precision`; ties prefer non-truncating codecs.
/// Without a qualifying replica the most precise one is returned, flagged as
/// a downgrade.
pub fn choose_replica(descriptor: &DatasetDescriptor, precision: u32) -> Option<(&ReplicaDesc, bool)> {
    let qualifying = descriptor.replicas.iter().filter(|r| r.codec.precision() >= precision).min_by(|a, b| {
        (a.max_block_bytes, a.codec.is_lossy(), &a.id).cmp(&(b.max_block_bytes, b.codec.is_lossy(), &b.id))
    });
    if let Some(r) = qualifying {
        return Some((r, false));
    }
    descriptor
        .replicas
        .iter()
        .max_by(|a, b| {
            (a.codec.precision(), std::cmp::Reverse(a.max_block_bytes))
                .cmp(&(b.codec.precision(), std::cmp::Reverse(b.max_block_bytes)))
        })
        .map(|r| (r, true))
}

struct Costing<'a> {
    pattern: BitPattern,
    encoder: ZEncoder,
    region: &'a Region,
    block_bits: u32,
    block_bytes: u64,
    profile: StoreProfile,
}

impl Costing<'_> {
    fn result_bytes(&self, level: u32) -> (Vec<u64>, u64) {
        let grid = level_grid(&self.pattern, level).expect("level checked");
        let counts = grid.counts_in(self.region);
        let bytes = 4 * counts.iter().product::<u64>();
        (counts, bytes)
    }

    fn at(&self, level: u32) -> (Estimate, Vec<u64>, Vec<u64>) {
        let grid = level_grid(&self.pattern, level).expect("level checked");
        let counts = grid.counts_in(self.region);
        let parts = lattice_parts(&self.encoder, &grid, self.region);
        let blocks = collect_blocks(&parts, self.pattern.total_bits(), self.block_bits);
        let requests = blocks.len() as u64;
        let wire_bytes = requests * self.block_bytes;
        let estimate = Estimate {
            result_bytes: 4 * counts.iter().product::<u64>(),
            wire_bytes,
            requests,
            cost_units: self.profile.cost(wire_bytes),
            latency_ms: self.profile.transfer_ms(requests, wire_bytes),
        };
        (estimate, blocks, counts)
    }

    /// Estimate at `level` if it satisfies `c`, skipping block enumeration when
    /// the payload alone is too large.
    fn feasible(&self, level: u32, c: &Constraints) -> Option<(Estimate, Vec<u64>, Vec<u64>)> {
        if let Some(max) = c.max_bytes {
            if self.result_bytes(level).1 > max {
                return None;
            }
        }
        let r = self.at(level);
        r.0.violations(c).is_empty().then_some(r)
    }
}

fn check_constraints(c: &Constraints) -> Result<()> {
    for (name, v) in [("max_cost_units", c.max_cost_units), ("max_latency_ms", c.max_latency_ms)] {
        if let Some(v) = v {
            if !v.is_finite() || v < 0.0 {
                return Err(FabricError::BadQuery(format!("{name} must be finite and non-negative")));
            }
        }
    }
    Ok(())
}

/// Picks the finest level in `[min_level, requested]` that meets every
/// constraint, or explains why none does.
pub fn plan(
    descriptor: &DatasetDescriptor,
    profile: StoreProfile,
    query: &Query,
    constraints: &Constraints,
) -> Result<PlanOutcome> {
    let bad = |m: String| Err(FabricError::BadQuery(m));
    if descriptor.field(&query.field).is_none() {
        return bad(format!("unknown field '{}'", query.field));
    }
    if query.timestep >= descriptor.timesteps {
        return bad(format!("timestep {} outside [0, {})", query.timestep, descriptor.timesteps));
    }
    if !(1..=32).contains(&query.precision) {
        return bad(format!("precision {} outside [1, 32]", query.precision));
    }
    check_constraints(constraints)?;
    let pattern = descriptor.bit_pattern().map_err(|e| FabricError::BadDescriptor(e.to_string()))?;
    let m = pattern.total_bits();
    let requested = query.level.unwrap_or(m);
    if requested > m {
        return bad(format!("level {requested} outside [0, {m}]"));
    }
    if constraints.min_level > requested {
        return bad(format!("min_level {} exceeds level {requested}", constraints.min_level));
    }
    let region = query.region.clone().unwrap_or_else(|| Region::full(&descriptor.extents()));
    region.validate(&descriptor.extents()).map_err(|e| FabricError::BadQuery(e.to_string()))?;
    let (replica, downgraded) = choose_replica(descriptor, query.precision)
        .ok_or_else(|| FabricError::BadDescriptor(format!("dataset '{}' has no replicas", descriptor.id)))?;

    let costing = Costing {
        encoder: ZEncoder::new(&pattern),
        pattern,
        region: &region,
        block_bits: descriptor.block_bits,
        block_bytes: replica.max_block_bytes,
        profile,
    };
    for level in (constraints.min_level..=requested).rev() {
        if let Some((estimate, blocks, counts)) = costing.feasible(level, constraints) {
            return Ok(PlanOutcome::Ready(Plan {
                dataset: descriptor.id.clone(),
                field: query.field.clone(),
                timestep: query.timestep,
                region,
                level,
                requested_level: requested,
                replica: replica.id.clone(),
                codec: replica.codec,
                precision: replica.codec.precision(),
                downgraded,
                counts,
                blocks,
                estimate,
            }));
        }
    }

    let floor = constraints.min_level;
    let (at_floor, _, _) = costing.at(floor);
    let violated = at_floor.violations(constraints);
    let feasible_level_below_floor = (0..floor).rev().find(|l| costing.feasible(*l, constraints).is_some());
    let has = |k| violated.contains(&k);
    let hint = Relaxation {
        max_bytes: has(ConstraintKind::MaxBytes).then_some(at_floor.result_bytes),
        max_requests: has(ConstraintKind::MaxRequests).then_some(at_floor.requests),
        max_cost_units: has(ConstraintKind::MaxCostUnits).then_some(at_floor.cost_units),
        max_latency_ms: has(ConstraintKind::MaxLatencyMs).then_some(at_floor.latency_ms),
    };
    Ok(PlanOutcome::Refused(Refusal {
        violated,
        requested_level: requested,
        min_level: floor,
        estimate_at_min_level: at_floor,
        feasible_level_below_floor,
        hint,
    }))
}
