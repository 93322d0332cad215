//! Contract checks every [`BlockStore`] backend must pass.
//!
//! The same suite runs against the directory, in-memory and HTTP backends.
//! It writes under `dataset`/`field`, timestep 0, replica `raw`; callers pass a
//! dataset the store will accept (directory and HTTP stores serve one dataset).

use super::{BlockKey, BlockStore, StoreError};
use crate::codec::{pack_envelope, CodecSpec};

/// Outcome of one named check.
#[derive(Debug, Clone)]
pub struct Check {
    pub name: &'static str,
    pub result: Result<(), String>,
}

fn check(name: &'static str, f: impl FnOnce() -> Result<(), String>) -> Check {
    Check { name, result: f() }
}

fn envelope(tag: u8) -> Vec<u8> {
    pack_envelope(CodecSpec::Lossless, &[tag; 64]).expect("non-empty")
}

/// Runs the writable-store checks. `max_block` bounds the block indices used.
pub fn run(store: &dyn BlockStore, dataset: &str, field: &str, max_block: u64) -> Vec<Check> {
    assert!(max_block >= 6, "contract suite needs at least 6 block slots");
    let key = |b: u64| BlockKey::new(dataset, field, 0, "raw", b);
    vec![
        check("put then get returns identical bytes", || {
            let env = envelope(1);
            store.put_block(&key(1), &env).map_err(|e| e.to_string())?;
            let got = store.get_block(&key(1)).map_err(|e| e.to_string())?;
            (got == env).then_some(()).ok_or("bytes differ".into())
        }),
        check("second put wins", || {
            store.put_block(&key(3), &envelope(2)).map_err(|e| e.to_string())?;
            store.put_block(&key(3), &envelope(3)).map_err(|e| e.to_string())?;
            let got = store.get_block(&key(3)).map_err(|e| e.to_string())?;
            (got == envelope(3)).then_some(()).ok_or("first payload returned".into())
        }),
        check("missing key is NotFound", || {
            match store.get_block(&BlockKey::new(dataset, field, 0, "raw", max_block - 1)) {
                Err(StoreError::NotFound(_)) => Ok(()),
                other => Err(format!("expected NotFound, got {other:?}")),
            }
        }),
        check("list is sorted and exact", || {
            for b in [0, 5, 2] {
                store.put_block(&key(b), &envelope(b as u8)).map_err(|e| e.to_string())?;
            }
            let got = store.list_blocks(dataset, field, 0, "raw").map_err(|e| e.to_string())?;
            (got == vec![0, 1, 2, 3, 5]).then_some(()).ok_or(format!("listed {got:?}"))
        }),
        check("empty and unknown replicas list nothing", || {
            let a = store.list_blocks(dataset, field, 0, "truncate-3").map_err(|e| e.to_string())?;
            let b = store.list_blocks(dataset, field, 1, "raw").map_err(|e| e.to_string())?;
            (a.is_empty() && b.is_empty()).then_some(()).ok_or(format!("{a:?} {b:?}"))
        }),
        check("egress counters are monotone", || {
            let before = store.egress();
            store.get_block(&key(1)).map_err(|e| e.to_string())?;
            let after = store.egress();
            (after.requests > before.requests && after.bytes > before.bytes)
                .then_some(())
                .ok_or(format!("{before:?} -> {after:?}"))
        }),
    ]
}

/// Checks a read-only store refuses writes with `IoFailure`.
pub fn run_read_only(store: &dyn BlockStore, dataset: &str, field: &str) -> Vec<Check> {
    vec![check("put to read-only store is IoFailure", || {
        match store.put_block(&BlockKey::new(dataset, field, 0, "raw", 0), &envelope(9)) {
            Err(StoreError::IoFailure(_)) => Ok(()),
            other => Err(format!("expected IoFailure, got {other:?}")),
        }
    })]
}

/// Panics with every failed check listed.
pub fn assert_all(checks: &[Check]) {
    let failed: Vec<String> =
        checks.iter().filter_map(|c| c.result.as_ref().err().map(|e| format!("{}: {e}", c.name))).collect();
    assert!(failed.is_empty(), "store contract failures:\n{}", failed.join("\n"));
}
