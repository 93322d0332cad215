use std::sync::Arc;

use idxfabric::fabric::{ReadResult, Refusal};
use idxfabric::pipeline::{ingest, make_replica, synth_volume, SynthKind};
use idxfabric::prelude::*;
use idxfabric::store::{conformance, copy_dataset, HttpStore};
use idxfabric_service::{spawn_background, AppState, BackgroundServer, DataResponse};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

const N: u64 = 16;

fn descriptor(id: &str) -> DatasetDescriptor {
    DatasetDescriptor::new(
        id,
        &[('x', N), ('y', N), ('z', N)],
        vec![FieldDesc { name: "value".into(), fill: 0.0 }],
        1,
        8,
    )
    .unwrap()
}

fn volume(id: &str, kind: SynthKind) -> (DatasetDescriptor, Arc<MemStore>) {
    let raw = synth_volume(&[N, N, N], 7, kind);
    let mut desc = descriptor(id);
    let store = Arc::new(MemStore::new());
    ingest(&raw, &mut desc, &*store, CodecSpec::Lossless).unwrap();
    make_replica(&mut desc, &*store, CodecSpec::Truncate(16), false).unwrap();
    (desc, store)
}

fn local(desc: &DatasetDescriptor, store: &Arc<MemStore>) -> Dataset {
    Dataset::with_descriptor(&desc.id, desc.clone(), store.clone(), OpenOptions::default()).unwrap()
}

fn server(writable: bool) -> (BackgroundServer, Dataset) {
    let (desc, store) = volume("vol", SynthKind::Smooth);
    let (flat_desc, flat_store) = volume("flat", SynthKind::Constant);
    let state = AppState::new(0.09).writable(writable);
    state.insert(local(&desc, &store)).unwrap();
    state.insert(local(&flat_desc, &flat_store)).unwrap();
    (spawn_background(state).unwrap(), local(&desc, &store))
}

fn get(url: &str) -> (u16, Vec<u8>) {
    let agent: ureq::Agent = ureq::Agent::config_builder().http_status_as_error(false).build().into();
    let mut resp = agent.get(url).call().unwrap();
    let status = resp.status().as_u16();
    (status, resp.body_mut().with_config().limit(u64::MAX).read_to_vec().unwrap())
}

fn get_json(url: &str) -> (u16, Value) {
    let (status, body) = get(url);
    (status, serde_json::from_slice(&body).unwrap())
}

fn bits(v: &[f32]) -> Vec<u32> {
    v.iter().map(|x| x.to_bits()).collect()
}

fn assert_same(resp: &DataResponse, r: &ReadResult) {
    assert_eq!(resp.level as u32, r.plan.level);
    assert_eq!(resp.precision as u32, r.plan.precision);
    assert_eq!(resp.downgraded, r.plan.downgraded);
    assert_eq!(resp.counts, r.plan.counts);
    assert_eq!(bits(&resp.values), bits(&r.values));
}

#[test]
fn lists_and_describes() {
    let (srv, ds) = server(false);
    let base = srv.base_url();
    let (status, ids) = get_json(&format!("{base}/v1/datasets"));
    assert_eq!(status, 200);
    assert_eq!(ids, serde_json::json!(["flat", "vol"]));

    let url = format!("{base}/v1/datasets/vol");
    let (status, doc) = get_json(&url);
    assert_eq!(status, 200);
    let desc: DatasetDescriptor = serde_json::from_value(doc["descriptor"].clone()).unwrap();
    assert_eq!(&desc, ds.descriptor());
    assert_eq!(doc["fdo"]["identifier"], url);
    assert_eq!(doc["fdo"]["locator"]["store"], base);
    assert_eq!(doc["fdo"]["operations"].as_array().unwrap().len(), 4);
}

#[test]
fn empty_server_lists_nothing() {
    let srv = spawn_background(AppState::new(0.0)).unwrap();
    let (status, ids) = get_json(&format!("{}/v1/datasets", srv.base_url()));
    assert_eq!((status, ids), (200, serde_json::json!([])));
}

#[test]
fn data_matches_in_process_read() {
    let (srv, ds) = server(false);
    let base = format!("{}/v1/datasets/vol/data", srv.base_url());
    let cases: Vec<(String, Query, Constraints)> = vec![
        (String::new(), Query::new("value"), Constraints::default()),
        ("&level=7".into(), Query::new("value").at_level(7), Constraints::default()),
        ("&precision=16".into(), Query::new("value").with_precision(16), Constraints::default()),
        (
            "&x=3,11&z=0,5".into(),
            Query::new("value").with_region(Region::new(vec![3..11, 0..N, 0..5])),
            Constraints::default(),
        ),
        ("&max_bytes=3000".into(), Query::new("value"), Constraints { max_bytes: Some(3000), ..Default::default() }),
    ];
    for (params, q, c) in cases {
        let (status, body) = get(&format!("{base}?field=value&t=0{params}"));
        assert_eq!(status, 200, "{params}");
        let resp = DataResponse::decode(&body).unwrap();
        assert_same(&resp, &ds.read(&q, &c).unwrap());
    }
}

#[test]
fn remote_dataset_reads_equal_local() {
    let (srv, ds) = server(false);
    let remote = Dataset::open(&format!("{}/v1/datasets/vol", srv.base_url())).unwrap();
    assert_eq!(remote.descriptor(), ds.descriptor());
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let mut ranges = Vec::new();
        for _ in 0..3 {
            let lo = rng.random_range(0..N);
            ranges.push(lo..rng.random_range(lo + 1..=N));
        }
        let q = Query::new("value")
            .with_region(Region::new(ranges))
            .at_level(rng.random_range(0..=12))
            .with_precision(if rng.random_bool(0.5) { 16 } else { 32 });
        let a = remote.read(&q, &Constraints::default()).unwrap();
        let b = ds.read(&q, &Constraints::default()).unwrap();
        assert_eq!(a.plan.counts, b.plan.counts);
        assert_eq!(bits(&a.values), bits(&b.values));
    }
    assert!(remote.egress().requests > 0);
    let (_, e) = get_json(&format!("{}/v1/egress", srv.base_url()));
    assert!(e["bytes"].as_u64().unwrap() >= remote.egress().bytes);
    assert_eq!(e["price_per_gib"], 0.09);
}

#[test]
fn refusal_is_409_with_usable_hint() {
    let (srv, _) = server(false);
    let base = format!("{}/v1/datasets/vol/data?field=value", srv.base_url());
    let (status, body) = get_json(&format!("{base}&max_bytes=100&min_level=10"));
    assert_eq!(status, 409);
    assert!(body["error"].as_str().unwrap().contains("max_bytes"));
    let refusal: Refusal = serde_json::from_value(body).unwrap();
    assert!(refusal.violated.iter().any(|v| v.to_string() == "max_bytes"));
    let relaxed = refusal.hint.max_bytes.unwrap();
    let (status, bytes) = get(&format!("{base}&max_bytes={relaxed}&min_level=10"));
    assert_eq!(status, 200);
    assert_eq!(DataResponse::decode(&bytes).unwrap().level, 10);
}

#[test]
fn slice_drops_pinned_axis() {
    let (srv, ds) = server(false);
    let base = format!("{}/v1/datasets/vol/slice?field=value", srv.base_url());
    let (status, body) = get(&format!("{base}&axis=z&index=5"));
    assert_eq!(status, 200);
    let resp = DataResponse::decode(&body).unwrap();
    assert_eq!(resp.counts, vec![N, N]);
    let q = Query::new("value").with_region(Region::new(vec![0..N, 0..N, 5..6]));
    assert_eq!(bits(&resp.values), bits(&ds.read(&q, &Constraints::default()).unwrap().values));

    let agent: ureq::Agent = ureq::Agent::config_builder().http_status_as_error(false).build().into();
    let coarse = agent.get(&format!("{base}&axis=x&index=7&level=9")).call().unwrap();
    assert_eq!(coarse.headers()["x-slice-index"], "6");
    let (status, body) = get(&format!("{base}&axis=x&index=7&level=9"));
    assert_eq!(status, 200);
    let resp = DataResponse::decode(&body).unwrap();
    assert_eq!(resp.counts, vec![8, 8]);
    let q = Query::new("value").with_region(Region::new(vec![6..7, 0..N, 0..N])).at_level(9);
    assert_eq!(bits(&resp.values), bits(&ds.read(&q, &Constraints::default()).unwrap().values));

    assert_eq!(get(&format!("{base}&axis=q&index=1")).0, 400);
    assert_eq!(get(&format!("{base}&axis=z&index=16")).0, 400);
}

#[test]
fn in_range_statistics() {
    let (srv, ds) = server(false);
    let base = srv.base_url();
    let (status, body) = get_json(&format!("{base}/v1/datasets/vol/stats/in_range?field=value&lo=-1e9&hi=1e9"));
    assert_eq!(status, 200);
    assert_eq!(body["percent"], 100.0);
    let expect = ds.fraction_in_range(&Query::new("value").at_level(8), 14.0, 16.0).unwrap();
    let (_, body) = get_json(&format!("{base}/v1/datasets/vol/stats/in_range?lo=14&hi=16&level=8"));
    assert_eq!(body["in_range"], expect.in_range);
    assert_eq!(body["counted"], expect.counted);
    let (status, _) = get_json(&format!("{base}/v1/datasets/flat/stats/in_range?lo=0&hi=1"));
    assert_eq!(status, 422);
    assert_eq!(get(&format!("{base}/v1/datasets/vol/stats/in_range?lo=0")).0, 400);
}

#[test]
fn error_statuses() {
    let (srv, _) = server(false);
    let base = srv.base_url();
    let cases = [
        ("/v1/datasets/nope", 404),
        ("/v1/datasets/nope/data", 404),
        ("/v1/datasets/vol/block?field=value&t=0&replica=lossless&b=999", 404),
        ("/v1/datasets/vol/block?field=value&t=0&replica=lossless", 400),
        ("/v1/datasets/vol/block?field=value&t=zero&replica=lossless&b=0", 400),
        ("/v1/datasets/vol/data?field=nope", 400),
        ("/v1/datasets/vol/data?level=99", 400),
        ("/v1/datasets/vol/data?x=9,3", 400),
        ("/v1/datasets/vol/data?max_bytes=lots", 400),
    ];
    for (path, want) in cases {
        let (status, body) = get(&format!("{base}{path}"));
        assert_eq!(status, want, "{path}");
        let v: Value = serde_json::from_slice(&body).unwrap();
        assert!(v["error"].is_string(), "{path}");
    }
    let store = HttpStore::new(&base).unwrap();
    conformance::assert_all(&conformance::run_read_only(&store, "vol", "value"));
}

#[test]
fn http_store_passes_contract() {
    let state = AppState::new(0.0).writable(true);
    let store = Arc::new(MemStore::new());
    let mut desc = descriptor("c");
    desc.fields[0].name = "f".into();
    state.insert(Dataset::with_descriptor("c", desc, store, OpenOptions::default()).unwrap()).unwrap();
    let srv = spawn_background(state).unwrap();
    let http = HttpStore::new(&srv.base_url()).unwrap();
    conformance::assert_all(&conformance::run(&http, "c", "f", 16));
}

#[test]
fn upload_through_http_store() {
    let (desc, store) = volume("vol", SynthKind::Turbulent);
    let empty = Arc::new(MemStore::new());
    let bare = descriptor("vol");
    let state = AppState::new(0.0).writable(true);
    state.insert(Dataset::with_descriptor("vol", bare, empty.clone(), OpenOptions::default()).unwrap()).unwrap();
    let srv = spawn_background(state).unwrap();

    let http = HttpStore::new(&srv.base_url()).unwrap();
    let copied = copy_dataset(&desc, &*store, &http).unwrap();
    assert_eq!(copied as usize, empty.block_count());

    let remote = Dataset::open(&format!("{}/v1/datasets/vol", srv.base_url())).unwrap();
    assert_eq!(remote.descriptor(), &desc);
    let q = Query::new("value").with_precision(16);
    let a = remote.read(&q, &Constraints::default()).unwrap();
    let b = local(&desc, &store).read(&q, &Constraints::default()).unwrap();
    assert_eq!(bits(&a.values), bits(&b.values));
}

#[test]
fn blocks_and_level_zero_from_a_directory_store() {
    let (desc, mem) = volume("vol", SynthKind::Turbulent);
    let dir = tempfile::tempdir().unwrap();
    let files = DirStore::create(dir.path()).unwrap();
    copy_dataset(&desc, &*mem, &files).unwrap();
    let state = AppState::new(0.0);
    let path = files.block_path(&BlockKey::new("vol", "value", 0, "lossless", 3));
    state.insert(Dataset::with_descriptor("vol", desc, Arc::new(files), OpenOptions::default()).unwrap()).unwrap();
    let srv = spawn_background(state).unwrap();
    let base = format!("{}/v1/datasets/vol", srv.base_url());

    let (status, body) = get(&format!("{base}/block?field=value&t=0&replica=lossless&b=3"));
    assert_eq!(status, 200);
    assert_eq!(body, std::fs::read(path).unwrap());

    let (status, body) = get(&format!("{base}/data?level=0"));
    assert_eq!(status, 200);
    let resp = DataResponse::decode(&body).unwrap();
    assert_eq!((resp.level, resp.counts, resp.values.len()), (0, vec![1, 1, 1], 1));
}
