//! Dataset URIs.
//!
//! * a directory holding `dataset.json`, or the path of that file
//! * `file:///abs/path[?params]`
//! * `http(s)://host[:port][/prefix]/v1/datasets/{id}[?params]`
//!
//! Query parameters: `cached=none|arco`, `cache_dir`, `cache_bytes`,
//! `price_per_gib`, `latency_ms`, `bandwidth`, `retries`, `endpoint_url`,
//! `access_key`, `secret_key`. Anything else is rejected.

use std::path::{Path, PathBuf};

use url::Url;

use super::{FabricError, Result};

/// Environment variable naming the default cache directory.
pub const CACHE_DIR_ENV: &str = "IDXFABRIC_CACHE_DIR";
pub const DEFAULT_CACHE_BYTES: u64 = 1 << 30;

#[derive(Debug, Clone, PartialEq)]
pub enum Location {
    Directory(PathBuf),
    Http { base: String, dataset: String },
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetUri {
    pub location: Option<Location>,
    pub cached: bool,
    pub cache_dir: Option<PathBuf>,
    pub cache_bytes: Option<u64>,
    pub price_per_gib: Option<f64>,
    pub latency_ms: Option<f64>,
    pub bandwidth: Option<f64>,
    pub retries: Option<u32>,
    pub endpoint_url: Option<String>,
    pub access_key: Option<String>,
    pub secret_key: Option<String>,
}

fn bad(uri: &str, why: impl std::fmt::Display) -> FabricError {
    FabricError::BadUri(format!("{uri}: {why}"))
}

fn number<T: std::str::FromStr>(uri: &str, key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| bad(uri, format!("bad value '{value}' for {key}")))
}

fn non_negative(uri: &str, key: &str, value: &str) -> Result<f64> {
    let v: f64 = number(uri, key, value)?;
    if v.is_finite() && v >= 0.0 {
        Ok(v)
    } else {
        Err(bad(uri, format!("{key} must be a finite non-negative number")))
    }
}

impl DatasetUri {
    pub fn parse(uri: &str) -> Result<Self> {
        let uri = uri.trim();
        if uri.is_empty() {
            return Err(bad(uri, "empty"));
        }
        let mut out = DatasetUri::default();
        let query: Vec<(String, String)>;
        if uri.starts_with("http://") || uri.starts_with("https://") {
            let url = Url::parse(uri).map_err(|e| bad(uri, e))?;
            let segs: Vec<&str> =
                url.path_segments().map(|s| s.filter(|p| !p.is_empty()).collect()).unwrap_or_default();
            let n = segs.len();
            if n < 3 || segs[n - 3] != "v1" || segs[n - 2] != "datasets" {
                return Err(bad(uri, "expected a path ending in /v1/datasets/{id}"));
            }
            let mut base = url.clone();
            base.set_query(None);
            base.set_path(&segs[..n - 3].join("/"));
            out.location = Some(Location::Http {
                base: base.as_str().trim_end_matches('/').to_string(),
                dataset: segs[n - 1].to_string(),
            });
            query = url.query_pairs().into_owned().collect();
        } else if let Some(rest) = uri.strip_prefix("file://") {
            let (path, q) = rest.split_once('?').unwrap_or((rest, ""));
            if !path.starts_with('/') {
                return Err(bad(uri, "file uris need an absolute path"));
            }
            let url = Url::parse(&format!("file://{path}")).map_err(|e| bad(uri, e))?;
            let path = url.to_file_path().map_err(|_| bad(uri, "not a file path"))?;
            out.location = Some(Location::Directory(dataset_root(&path)));
            query = url::form_urlencoded::parse(q.as_bytes()).into_owned().collect();
        } else if uri.contains("://") {
            return Err(bad(uri, "unsupported scheme"));
        } else {
            let (path, q) = uri.split_once('?').unwrap_or((uri, ""));
            out.location = Some(Location::Directory(dataset_root(Path::new(path))));
            query = url::form_urlencoded::parse(q.as_bytes()).into_owned().collect();
        }
        for (key, value) in &query {
            match key.as_str() {
                "cached" => {
                    out.cached = match value.as_str() {
                        "none" => false,
                        "arco" => true,
                        other => return Err(bad(uri, format!("unknown cache mode '{other}'"))),
                    }
                }
                "cache_dir" => out.cache_dir = Some(PathBuf::from(value)),
                "cache_bytes" => out.cache_bytes = Some(number(uri, key, value)?),
                "price_per_gib" => out.price_per_gib = Some(non_negative(uri, key, value)?),
                "latency_ms" => out.latency_ms = Some(non_negative(uri, key, value)?),
                "bandwidth" => out.bandwidth = Some(non_negative(uri, key, value)?),
                "retries" => out.retries = Some(number(uri, key, value)?),
                "endpoint_url" => out.endpoint_url = Some(value.clone()),
                "access_key" => out.access_key = Some(value.clone()),
                "secret_key" => out.secret_key = Some(value.clone()),
                other => return Err(bad(uri, format!("unknown parameter '{other}'"))),
            }
        }
        if let (Some(endpoint), Some(Location::Http { base, .. })) = (&out.endpoint_url, &mut out.location) {
            let e = Url::parse(endpoint).map_err(|e| bad(uri, e))?;
            *base = e.as_str().trim_end_matches('/').to_string();
        }
        Ok(out)
    }

    pub fn location(&self) -> &Location {
        self.location.as_ref().expect("parsed uris have a location")
    }

    /// Cache directory: the `cache_dir` parameter, then the environment, then
    /// a directory under the system temp dir.
    pub fn resolved_cache_dir(&self) -> PathBuf {
        self.cache_dir
            .clone()
            .or_else(|| std::env::var_os(CACHE_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| std::env::temp_dir().join("idxfabric-cache"))
    }
}

fn dataset_root(path: &Path) -> PathBuf {
    if path.extension().is_some_and(|e| e == "json") {
        path.parent().map(Path::to_path_buf).unwrap_or_default()
    } else {
        path.to_path_buf()
    }
}
