mod common;

use std::sync::OnceLock;

use common::{fixture_in, Fixture, FIELD};
use idxfabric::fabric::{Estimate, PlanOutcome};
use idxfabric::prelude::*;
use proptest::prelude::*;

fn shared() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let store = MemStore::with_cost_model(StoreProfile::remote(20.0, 50.0 * 1024.0 * 1024.0, 0.09));
        fixture_in(&[('x', 32), ('y', 24), ('z', 16)], 7, 13, &[16], store)
    })
}

fn region() -> impl Strategy<Value = Region> {
    let axis = |e: u64| (0..e).prop_flat_map(move |lo| (Just(lo), lo + 1..=e)).prop_map(|(lo, hi)| lo..hi);
    (axis(32), axis(24), axis(16)).prop_map(|(x, y, z)| Region::new(vec![x, y, z]))
}

fn constraints(m: u32) -> impl Strategy<Value = (u32, Constraints)> {
    (
        0..=m,
        0..=m,
        proptest::option::of(0u64..200_000),
        proptest::option::of(0u64..40),
        proptest::option::of(0.0f64..2e-5),
        proptest::option::of(0.0f64..1_000.0),
    )
        .prop_map(|(a, b, max_bytes, max_requests, max_cost_units, max_latency_ms)| {
            let (floor, level) = (a.min(b), a.max(b));
            (level, Constraints { max_bytes, max_requests, max_cost_units, max_latency_ms, min_level: floor })
        })
}

fn within(e: &Estimate, c: &Constraints) -> bool {
    c.max_bytes.is_none_or(|m| e.result_bytes <= m)
        && c.max_requests.is_none_or(|m| e.requests <= m)
        && c.max_cost_units.is_none_or(|m| e.cost_units <= m)
        && c.max_latency_ms.is_none_or(|m| e.latency_ms <= m)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 300, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn plans_are_sound_maximal_and_refusals_are_fixable(
        region in region(),
        (level, c) in constraints(14),
        precision in prop_oneof![Just(16u32), Just(32u32)],
    ) {
        let f = shared();
        let ds = f.dataset();
        let q = Query::new(FIELD).with_region(region).at_level(level).with_precision(precision);
        match ds.plan(&q, &c).unwrap() {
            PlanOutcome::Ready(plan) => {
                prop_assert!(within(&plan.estimate, &c));
                prop_assert!(plan.level >= c.min_level && plan.level <= level);
                let est = plan.estimate;
                let r = ds.read_plan(plan.clone()).unwrap();
                prop_assert!(r.stats.wire_bytes <= est.wire_bytes);
                prop_assert!(r.stats.requests <= est.requests);
                prop_assert!(StoreProfile::remote(20.0, 0.0, 0.09).cost(r.stats.wire_bytes) <= est.cost_units);
                prop_assert_eq!(4 * r.values.len() as u64, est.result_bytes);
                if plan.level < level {
                    let up = Constraints { min_level: plan.level + 1, ..c.clone() };
                    let q_up = q.clone().at_level(plan.level + 1);
                    prop_assert!(matches!(ds.plan(&q_up, &up).unwrap(), PlanOutcome::Refused(_)));
                }
            }
            PlanOutcome::Refused(refusal) => {
                prop_assert!(!refusal.violated.is_empty());
                if let Some(l) = refusal.feasible_level_below_floor {
                    prop_assert!(l < c.min_level);
                }
                let relaxed = refusal.hint.apply(&c);
                prop_assert!(matches!(ds.plan(&q, &relaxed).unwrap(), PlanOutcome::Ready(_)));
            }
        }
    }

    #[test]
    fn planning_is_deterministic(region in region(), (level, c) in constraints(14)) {
        let ds = shared().dataset();
        let q = Query::new(FIELD).with_region(region).at_level(level);
        prop_assert_eq!(ds.plan(&q, &c).unwrap(), ds.plan(&q, &c).unwrap());
    }
}

#[test]
fn refusal_json_roundtrips() {
    let ds = shared().dataset();
    let c = Constraints { max_bytes: Some(8), min_level: 6, ..Default::default() };
    let PlanOutcome::Refused(r) = ds.plan(&Query::new(FIELD), &c).unwrap() else { panic!() };
    let json = serde_json::to_string(&r).unwrap();
    assert!(json.contains("\"max_bytes\""));
    let back: idxfabric::fabric::Refusal = serde_json::from_str(&json).unwrap();
    assert_eq!(back, r);
    assert_eq!(r.feasible_level_below_floor, Some(1));
}
