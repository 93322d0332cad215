//! HTTP API over open datasets.
//!
//! | method  | path                                   | body                         |
//! |---------|----------------------------------------|------------------------------|
//! | GET     | `/v1/datasets`                         | JSON array of dataset ids    |
//! | GET/PUT | `/v1/datasets/{id}`                    | `{descriptor, fdo}` / descriptor |
//! | GET/PUT | `/v1/datasets/{id}/block`              | block envelope               |
//! | GET     | `/v1/datasets/{id}/blocks`             | JSON array of block indices  |
//! | GET     | `/v1/datasets/{id}/data`               | [`DataResponse`]             |
//! | GET     | `/v1/datasets/{id}/slice`              | [`DataResponse`]             |
//! | GET     | `/v1/datasets/{id}/stats/in_range`     | JSON fraction in range       |
//! | GET     | `/v1/egress`                           | JSON egress counters         |
//!
//! Block endpoints take `field`, `t`, `replica` and (single block) `b`. Read
//! endpoints take `field`, `t`, `level`, `precision`, per-axis `{axis}=lo,hi`
//! and the constraint limits; a read the limits rule out answers 409 with the
//! refusal as JSON. Errors are `{"error": "..."}` with 400, 403, 404, 422 or
//! 500.

use std::collections::BTreeMap;
use std::future::Future;
use std::io;
use std::net::SocketAddr;
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use idxfabric::fabric::{plan, FabricError, FdoRecord, PlanOutcome};
use idxfabric::index::level_grid;
use idxfabric::store::{BlockKey, EgressMeter, StoreError};
use idxfabric::{Dataset, DatasetDescriptor, OpenOptions, Region};
use serde_json::{json, Value};
use tokio::sync::oneshot;
use tower_http::cors::CorsLayer;

mod params;
pub mod wire;

use params::Params;
pub use wire::{DataResponse, WireError};

/// Datasets served plus server-side egress accounting.
#[derive(Debug)]
pub struct AppState {
    datasets: RwLock<BTreeMap<String, Arc<Dataset>>>,
    writable: bool,
    price_per_gib: f64,
    meter: EgressMeter,
}

impl AppState {
    pub fn new(price_per_gib: f64) -> Self {
        Self { datasets: RwLock::default(), writable: false, price_per_gib, meter: EgressMeter::default() }
    }

    /// Accept block and descriptor uploads.
    pub fn writable(mut self, writable: bool) -> Self {
        self.writable = writable;
        self
    }

    /// Serves `dataset` under its descriptor id.
    pub fn insert(&self, dataset: Dataset) -> Result<(), FabricError> {
        let id = dataset.descriptor().id.clone();
        let mut map = self.datasets.write().unwrap();
        if map.contains_key(&id) {
            return Err(FabricError::DuplicateIdentifier(id));
        }
        map.insert(id, Arc::new(dataset));
        Ok(())
    }

    pub fn ids(&self) -> Vec<String> {
        self.datasets.read().unwrap().keys().cloned().collect()
    }

    pub fn egress(&self) -> idxfabric::store::Egress {
        self.meter.snapshot(self.price_per_gib)
    }

    fn dataset(&self, id: &str) -> Result<Arc<Dataset>, ApiError> {
        self.datasets
            .read()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown dataset '{id}'")))
    }

    fn check_writable(&self) -> Result<(), ApiError> {
        if self.writable {
            Ok(())
        } else {
            Err(ApiError::new(StatusCode::FORBIDDEN, "server is read-only"))
        }
    }
}

#[derive(Debug)]
struct ApiError {
    status: StatusCode,
    body: Value,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self { status, body: json!({ "error": message.into() }) }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }
}

impl From<FabricError> for ApiError {
    fn from(e: FabricError) -> Self {
        match e {
            FabricError::Refused(r) => {
                let mut body = serde_json::to_value(&*r).unwrap_or_else(|_| json!({}));
                body["error"] = json!(r.to_string());
                Self { status: StatusCode::CONFLICT, body }
            }
            FabricError::Store(s) => s.into(),
            FabricError::BadQuery(_) | FabricError::BadUri(_) => Self::bad_request(e.to_string()),
            FabricError::EmptySelection => Self::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()),
            FabricError::UnknownIdentifier(_) => Self::new(StatusCode::NOT_FOUND, e.to_string()),
            _ => Self::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
        }
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let status = match e {
            StoreError::NotFound(_) => StatusCode::NOT_FOUND,
            StoreError::Malformed(_) => StatusCode::BAD_REQUEST,
            StoreError::Timeout(_) => StatusCode::GATEWAY_TIMEOUT,
            StoreError::IoFailure(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult = Result<Response, ApiError>;

/// Runs a handler body on the blocking pool; reads touch disk or other servers.
async fn blocking(f: impl FnOnce() -> ApiResult + Send + 'static) -> Response {
    match tokio::task::spawn_blocking(f).await {
        Ok(Ok(r)) => r,
        Ok(Err(e)) => e.into_response(),
        Err(e) => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()).into_response(),
    }
}

fn binary(state: &AppState, bytes: Vec<u8>) -> Response {
    state.meter.record(bytes.len() as u64);
    ([(header::CONTENT_TYPE, "application/octet-stream")], bytes).into_response()
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/v1/datasets", get(list_datasets))
        .route("/v1/datasets/{id}", get(get_dataset).put(put_descriptor))
        .route("/v1/datasets/{id}/block", get(get_block).put(put_block))
        .route("/v1/datasets/{id}/blocks", get(list_blocks))
        .route("/v1/datasets/{id}/data", get(get_data))
        .route("/v1/datasets/{id}/slice", get(get_slice))
        .route("/v1/datasets/{id}/stats/in_range", get(get_in_range))
        .route("/v1/egress", get(get_egress))
        .layer(DefaultBodyLimit::max(1 << 30))
        .layer(CorsLayer::permissive())
        .with_state(state)
}

async fn list_datasets(State(s): State<Arc<AppState>>) -> Json<Vec<String>> {
    Json(s.ids())
}

async fn get_dataset(State(s): State<Arc<AppState>>, Path(id): Path<String>, headers: HeaderMap) -> Response {
    let ds = match s.dataset(&id) {
        Ok(ds) => ds,
        Err(e) => return e.into_response(),
    };
    let host = headers.get(header::HOST).and_then(|h| h.to_str().ok()).unwrap_or("localhost");
    let base = format!("http://{host}");
    let fdo = FdoRecord::new(format!("{base}/v1/datasets/{id}"), ds.descriptor(), base);
    Json(json!({ "descriptor": ds.descriptor(), "fdo": fdo })).into_response()
}

async fn put_descriptor(State(s): State<Arc<AppState>>, Path(id): Path<String>, body: Bytes) -> Response {
    blocking(move || {
        s.check_writable()?;
        let ds = s.dataset(&id)?;
        let desc = DatasetDescriptor::from_json(&body).map_err(|e| ApiError::bad_request(e.to_string()))?;
        if desc.id != id {
            return Err(ApiError::bad_request(format!("descriptor id '{}' does not match '{id}'", desc.id)));
        }
        ds.store().put_descriptor(&desc)?;
        let fresh = Dataset::with_descriptor(ds.identifier(), desc, ds.store().clone(), OpenOptions::default())?;
        s.datasets.write().unwrap().insert(id, Arc::new(fresh));
        Ok(StatusCode::NO_CONTENT.into_response())
    })
    .await
}

fn block_key(id: &str, p: &Params, single: bool) -> Result<BlockKey, ApiError> {
    let field: String = params::required(p, "field").map_err(ApiError::bad_request)?;
    let t = params::required(p, "t").map_err(ApiError::bad_request)?;
    let replica: String = params::required(p, "replica").map_err(ApiError::bad_request)?;
    let b = if single { params::required(p, "b").map_err(ApiError::bad_request)? } else { 0 };
    Ok(BlockKey::new(id, &field, t, &replica, b))
}

async fn get_block(State(s): State<Arc<AppState>>, Path(id): Path<String>, Query(p): Query<Params>) -> Response {
    blocking(move || {
        let ds = s.dataset(&id)?;
        let key = block_key(&id, &p, true)?;
        let bytes = ds.store().get_block(&key)?;
        Ok(binary(&s, bytes))
    })
    .await
}

async fn put_block(
    State(s): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(p): Query<Params>,
    body: Bytes,
) -> Response {
    blocking(move || {
        s.check_writable()?;
        let ds = s.dataset(&id)?;
        let key = block_key(&id, &p, true)?;
        ds.store().put_block(&key, &body)?;
        Ok(StatusCode::NO_CONTENT.into_response())
    })
    .await
}

async fn list_blocks(State(s): State<Arc<AppState>>, Path(id): Path<String>, Query(p): Query<Params>) -> Response {
    blocking(move || {
        let ds = s.dataset(&id)?;
        let key = block_key(&id, &p, false)?;
        let blocks = ds.store().list_blocks(&id, &key.field, key.timestep, &key.replica)?;
        Ok(Json(blocks).into_response())
    })
    .await
}

/// Plans with the server's price so cost limits see what this server charges.
fn plan_here(
    s: &AppState,
    ds: &Dataset,
    q: &idxfabric::Query,
    c: &idxfabric::Constraints,
) -> Result<idxfabric::fabric::Plan, ApiError> {
    let mut profile = ds.store().profile();
    profile.price_per_gib = s.price_per_gib;
    match plan(ds.descriptor(), profile, q, c)? {
        PlanOutcome::Ready(p) => Ok(p),
        PlanOutcome::Refused(r) => Err(FabricError::Refused(Box::new(r)).into()),
    }
}

async fn get_data(State(s): State<Arc<AppState>>, Path(id): Path<String>, Query(p): Query<Params>) -> Response {
    blocking(move || {
        let ds = s.dataset(&id)?;
        let d = ds.descriptor();
        let mut q = params::query(d, &p).map_err(ApiError::bad_request)?;
        q.region = params::region(d, &p, None).map_err(ApiError::bad_request)?;
        let c = params::constraints(&p).map_err(ApiError::bad_request)?;
        let r = ds.read_plan(plan_here(&s, &ds, &q, &c)?)?;
        let resp = DataResponse {
            level: r.plan.level as u8,
            precision: r.plan.precision as u8,
            downgraded: r.plan.downgraded,
            counts: r.plan.counts,
            values: r.values,
        };
        Ok(binary(&s, resp.encode()))
    })
    .await
}

/// One plane orthogonal to `axis`. The index snaps down to the lattice of the
/// level actually read; the response omits the pinned axis and reports the
/// plane in `x-slice-index`.
async fn get_slice(State(s): State<Arc<AppState>>, Path(id): Path<String>, Query(p): Query<Params>) -> Response {
    blocking(move || {
        let ds = s.dataset(&id)?;
        let d = ds.descriptor();
        let name: char = params::required(&p, "axis").map_err(ApiError::bad_request)?;
        let axis = d.axis_index(name).ok_or_else(|| ApiError::bad_request(format!("unknown axis '{name}'")))?;
        let index: u64 = params::required(&p, "index").map_err(ApiError::bad_request)?;
        if index >= d.axes[axis].extent {
            return Err(ApiError::bad_request(format!("index {index} outside axis '{name}'")));
        }
        let mut q = params::query(d, &p).map_err(ApiError::bad_request)?;
        let base = params::region(d, &p, Some(axis))
            .map_err(ApiError::bad_request)?
            .unwrap_or_else(|| Region::full(&d.extents()));
        let c = params::constraints(&p).map_err(ApiError::bad_request)?;
        let pattern = d.bit_pattern().map_err(|e| ApiError::bad_request(e.to_string()))?;
        let mut level = q.level.unwrap_or(pattern.total_bits());
        loop {
            let grid = level_grid(&pattern, level).map_err(|e| ApiError::bad_request(e.to_string()))?;
            let stride = grid.strides[axis];
            let plane = index / stride * stride;
            let mut region = base.clone();
            region.ranges[axis] = plane..plane + 1;
            q.region = Some(region);
            q.level = Some(level);
            let plan = plan_here(&s, &ds, &q, &c)?;
            if plan.level < level {
                level = plan.level;
                continue;
            }
            let r = ds.read_plan(plan)?;
            let mut counts = r.plan.counts.clone();
            counts.remove(axis);
            let resp = DataResponse {
                level: r.plan.level as u8,
                precision: r.plan.precision as u8,
                downgraded: r.plan.downgraded,
                counts,
                values: r.values,
            };
            let mut out = binary(&s, resp.encode());
            out.headers_mut().insert("x-slice-index", plane.into());
            return Ok(out);
        }
    })
    .await
}

async fn get_in_range(State(s): State<Arc<AppState>>, Path(id): Path<String>, Query(p): Query<Params>) -> Response {
    blocking(move || {
        let ds = s.dataset(&id)?;
        let d = ds.descriptor();
        let lo: f32 = params::required(&p, "lo").map_err(ApiError::bad_request)?;
        let hi: f32 = params::required(&p, "hi").map_err(ApiError::bad_request)?;
        let mut q = params::query(d, &p).map_err(ApiError::bad_request)?;
        q.region = params::region(d, &p, None).map_err(ApiError::bad_request)?;
        Ok(Json(ds.fraction_in_range(&q, lo, hi)?).into_response())
    })
    .await
}

async fn get_egress(State(s): State<Arc<AppState>>) -> Json<Value> {
    let e = s.egress();
    Json(json!({
        "bytes": e.bytes,
        "requests": e.requests,
        "cost_units": e.cost_units,
        "price_per_gib": s.price_per_gib,
    }))
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: Arc<AppState>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> io::Result<()> {
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await
}

/// Binds `addr` and serves on a new runtime until interrupted.
pub fn serve_blocking(addr: SocketAddr, state: AppState, on_bound: impl FnOnce(SocketAddr)) -> io::Result<()> {
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        on_bound(listener.local_addr()?);
        serve(listener, Arc::new(state), async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
    })
}

/// A server on its own thread and runtime; dropping it shuts the server down.
#[derive(Debug)]
pub struct BackgroundServer {
    addr: SocketAddr,
    state: Arc<AppState>,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<io::Result<()>>>,
}

impl BackgroundServer {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// `http://127.0.0.1:{port}`
    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn state(&self) -> &Arc<AppState> {
        &self.state
    }
}

impl Drop for BackgroundServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

/// Serves `state` on an ephemeral loopback port.
pub fn spawn_background(state: AppState) -> io::Result<BackgroundServer> {
    let std_listener = std::net::TcpListener::bind("127.0.0.1:0")?;
    std_listener.set_nonblocking(true)?;
    let addr = std_listener.local_addr()?;
    let state = Arc::new(state);
    let (tx, rx) = oneshot::channel();
    let shared = state.clone();
    let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build()?;
    let thread = std::thread::Builder::new().name(format!("idxfabric-serve-{}", addr.port())).spawn(move || {
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::from_std(std_listener)?;
            serve(listener, shared, async {
                let _ = rx.await;
            })
            .await
        })
    })?;
    Ok(BackgroundServer { addr, state, shutdown: Some(tx), thread: Some(thread) })
}
