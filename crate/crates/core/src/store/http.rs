use std::time::Duration;

use serde::Deserialize;
use ureq::Agent;
use url::Url;

use super::{BlockKey, BlockStore, Egress, EgressMeter, Result, StoreError, StoreProfile};
use crate::dataset::DatasetDescriptor;

/// Client for the service's block endpoints: plain GET/PUT, one block per request.
#[derive(Debug)]
pub struct HttpStore {
    base: Url,
    agent: Agent,
    profile: StoreProfile,
    meter: EgressMeter,
}

#[derive(Deserialize)]
struct DatasetDoc {
    descriptor: DatasetDescriptor,
}

impl HttpStore {
    /// `base` is the server root, e.g. `http://127.0.0.1:8080`.
    pub fn new(base: &str) -> Result<Self> {
        let mut base = Url::parse(base).map_err(|e| StoreError::IoFailure(format!("{base}: {e}")))?;
        if !matches!(base.scheme(), "http" | "https") || base.host().is_none() {
            return Err(StoreError::IoFailure(format!("not an http url: {base}")));
        }
        if !base.path().ends_with('/') {
            let p = format!("{}/", base.path());
            base.set_path(&p);
        }
        let agent: Agent = Agent::config_builder()
            .http_status_as_error(false)
            .timeout_connect(Some(Duration::from_secs(5)))
            .timeout_global(Some(Duration::from_secs(120)))
            .build()
            .into();
        Ok(Self { base, agent, profile: StoreProfile::local(), meter: EgressMeter::default() })
    }

    /// Cost model reported to planners (the client cannot measure it).
    pub fn with_profile(mut self, profile: StoreProfile) -> Self {
        self.profile = profile;
        self
    }

    pub fn base(&self) -> &Url {
        &self.base
    }

    fn dataset_url(&self, dataset: &str) -> Url {
        self.base.join(&format!("v1/datasets/{dataset}")).expect("valid path")
    }

    fn block_url(&self, key: &BlockKey) -> Url {
        let mut u = self.dataset_url(&key.dataset);
        u.path_segments_mut().unwrap().push("block");
        u.query_pairs_mut()
            .append_pair("field", &key.field)
            .append_pair("t", &key.timestep.to_string())
            .append_pair("replica", &key.replica)
            .append_pair("b", &key.block.to_string());
        u
    }
}

fn transport_error(url: &Url, e: ureq::Error) -> StoreError {
    match e {
        ureq::Error::Timeout(_) => StoreError::Timeout(format!("{url}: {e}")),
        ureq::Error::Io(io) if io.kind() == std::io::ErrorKind::TimedOut => StoreError::Timeout(format!("{url}: {io}")),
        other => StoreError::IoFailure(format!("{url}: {other}")),
    }
}

fn status_error(url: &Url, status: u16, body: &[u8]) -> StoreError {
    let msg = format!("{url}: http {status}: {}", String::from_utf8_lossy(body));
    match status {
        404 => StoreError::NotFound(msg),
        408 | 504 => StoreError::Timeout(msg),
        _ => StoreError::IoFailure(msg),
    }
}

impl HttpStore {
    fn get_bytes(&self, url: &Url) -> Result<(u16, Vec<u8>)> {
        let mut resp = self.agent.get(url.as_str()).call().map_err(|e| transport_error(url, e))?;
        let status = resp.status().as_u16();
        let body = resp.body_mut().with_config().limit(u64::MAX).read_to_vec().map_err(|e| transport_error(url, e))?;
        Ok((status, body))
    }

    fn put_bytes(&self, url: &Url, bytes: &[u8]) -> Result<()> {
        let mut resp = self
            .agent
            .put(url.as_str())
            .header("content-type", "application/octet-stream")
            .send(bytes)
            .map_err(|e| transport_error(url, e))?;
        let status = resp.status().as_u16();
        if (200..300).contains(&status) {
            return Ok(());
        }
        let body = resp.body_mut().read_to_vec().unwrap_or_default();
        Err(status_error(url, status, &body))
    }
}

impl BlockStore for HttpStore {
    fn put_block(&self, key: &BlockKey, envelope: &[u8]) -> Result<()> {
        super::check_envelope(envelope)?;
        self.put_bytes(&self.block_url(key), envelope)
    }

    fn get_block(&self, key: &BlockKey) -> Result<Vec<u8>> {
        let url = self.block_url(key);
        let (status, body) = match self.get_bytes(&url) {
            Ok(r) => r,
            Err(e) => {
                self.meter.record(0);
                return Err(e);
            }
        };
        if status == 200 {
            self.meter.record(body.len() as u64);
            Ok(body)
        } else {
            self.meter.record(0);
            Err(status_error(&url, status, &body))
        }
    }

    fn list_blocks(&self, dataset: &str, field: &str, timestep: u32, replica: &str) -> Result<Vec<u64>> {
        let mut url = self.dataset_url(dataset);
        url.path_segments_mut().unwrap().push("blocks");
        url.query_pairs_mut()
            .append_pair("field", field)
            .append_pair("t", &timestep.to_string())
            .append_pair("replica", replica);
        let (status, body) = self.get_bytes(&url)?;
        if status != 200 {
            return Err(status_error(&url, status, &body));
        }
        serde_json::from_slice(&body).map_err(|e| StoreError::IoFailure(format!("{url}: {e}")))
    }

    fn put_descriptor(&self, descriptor: &DatasetDescriptor) -> Result<()> {
        self.put_bytes(&self.dataset_url(&descriptor.id), descriptor.to_json().as_bytes())
    }

    fn get_descriptor(&self, dataset: &str) -> Result<DatasetDescriptor> {
        let url = self.dataset_url(dataset);
        let (status, body) = self.get_bytes(&url)?;
        if status != 200 {
            return Err(status_error(&url, status, &body));
        }
        let doc: DatasetDoc =
            serde_json::from_slice(&body).map_err(|e| StoreError::IoFailure(format!("{url}: {e}")))?;
        doc.descriptor.validate().map_err(|e| StoreError::IoFailure(format!("{url}: {e}")))?;
        Ok(doc.descriptor)
    }

    fn profile(&self) -> StoreProfile {
        self.profile
    }

    fn egress(&self) -> Egress {
        self.meter.snapshot(self.profile.price_per_gib)
    }

    fn locator(&self) -> String {
        self.base.as_str().trim_end_matches('/').to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn urls() {
        let s = HttpStore::new("http://127.0.0.1:9/prefix").unwrap();
        let key = BlockKey::new("ds", "sea temp", 2, "truncate-16", 7);
        assert_eq!(
            s.block_url(&key).as_str(),
            "http://127.0.0.1:9/prefix/v1/datasets/ds/block?field=sea+temp&t=2&replica=truncate-16&b=7"
        );
        assert_eq!(s.locator(), "http://127.0.0.1:9/prefix");
        assert!(HttpStore::new("ftp://x").is_err());
        assert!(HttpStore::new("not a url").is_err());
    }

    #[test]
    fn unreachable_server_is_io_failure() {
        // port 9 (discard) is closed in the sandbox
        let s = HttpStore::new("http://127.0.0.1:9").unwrap();
        let err = s.get_block(&BlockKey::new("ds", "f", 0, "raw", 0)).unwrap_err();
        assert!(matches!(err, StoreError::IoFailure(_) | StoreError::Timeout(_)), "{err:?}");
        assert_eq!(s.egress().requests, 1);
    }
}
