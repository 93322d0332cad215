//! Query-string parsing shared by the read endpoints.
//!
//! Regions are given per axis as `{axis}=lo,hi` (half-open); omitted axes span
//! the full extent. Limits use the constraint names: `max_bytes`,
//! `max_requests`, `max_cost_units`, `max_latency_ms`, `min_level`.

use std::collections::HashMap;
use std::str::FromStr;

use idxfabric::fabric::{Constraints, Query};
use idxfabric::{DatasetDescriptor, Region};

pub type Params = HashMap<String, String>;

pub fn required<T: FromStr>(p: &Params, name: &str) -> Result<T, String> {
    optional(p, name)?.ok_or_else(|| format!("missing '{name}' parameter"))
}

pub fn optional<T: FromStr>(p: &Params, name: &str) -> Result<Option<T>, String> {
    match p.get(name) {
        None => Ok(None),
        Some(s) => s.trim().parse().map(Some).map_err(|_| format!("bad '{name}' value '{s}'")),
    }
}

fn range(s: &str) -> Option<(u64, u64)> {
    let (lo, hi) = s.split_once(',')?;
    Some((lo.trim().parse().ok()?, hi.trim().parse().ok()?))
}

/// Region from the per-axis parameters, skipping `pinned`.
pub fn region(d: &DatasetDescriptor, p: &Params, pinned: Option<usize>) -> Result<Option<Region>, String> {
    let mut any = false;
    let mut ranges = Vec::with_capacity(d.axes.len());
    for (i, axis) in d.axes.iter().enumerate() {
        let key = axis.name.to_string();
        match p.get(&key) {
            Some(s) if Some(i) != pinned => {
                let (lo, hi) = range(s).ok_or_else(|| format!("bad range '{key}={s}', expected lo,hi"))?;
                ranges.push(lo..hi);
                any = true;
            }
            _ => ranges.push(0..axis.extent),
        }
    }
    if !any {
        return Ok(None);
    }
    let r = Region::new(ranges);
    r.validate(&d.extents()).map_err(|e| e.to_string())?;
    Ok(Some(r))
}

pub fn query(d: &DatasetDescriptor, p: &Params) -> Result<Query, String> {
    let field = match p.get("field") {
        Some(f) => f.clone(),
        None => d.fields.first().map(|f| f.name.clone()).ok_or("dataset has no fields")?,
    };
    let mut q = Query::new(field).at_timestep(optional(p, "t")?.unwrap_or(0));
    if let Some(level) = optional(p, "level")? {
        q = q.at_level(level);
    }
    if let Some(bits) = optional(p, "precision")? {
        q = q.with_precision(bits);
    }
    Ok(q)
}

pub fn constraints(p: &Params) -> Result<Constraints, String> {
    Ok(Constraints {
        max_bytes: optional(p, "max_bytes")?,
        max_requests: optional(p, "max_requests")?,
        max_cost_units: optional(p, "max_cost_units")?,
        max_latency_ms: optional(p, "max_latency_ms")?,
        min_level: optional(p, "min_level")?.unwrap_or(0),
    })
}
