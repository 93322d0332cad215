//! `DataResponse`: a 64-byte little-endian header followed by float32 samples,
//! row-major over the returned axes.
//!
//! | offset | size | field                                   |
//! |--------|------|-----------------------------------------|
//! | 0      | 4    | magic `IDXD`                            |
//! | 4      | 1    | version (1)                             |
//! | 5      | 1    | achieved level                          |
//! | 6      | 1    | achieved precision (bits)               |
//! | 7      | 1    | number of axes (0..=6)                  |
//! | 8      | 1    | dtype code (1 = float32)                |
//! | 9      | 1    | flags; bit 0 = precision downgraded     |
//! | 10     | 6    | reserved, zero                          |
//! | 16     | 48   | six u64 per-axis counts, unused 0       |

use std::fmt;

pub const DATA_MAGIC: &[u8; 4] = b"IDXD";
pub const DATA_VERSION: u8 = 1;
pub const DATA_HEADER_LEN: usize = 64;
pub const FLAG_DOWNGRADED: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct DataResponse {
    pub level: u8,
    pub precision: u8,
    pub downgraded: bool,
    pub counts: Vec<u64>,
    pub values: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WireError(pub String);

impl fmt::Display for WireError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "bad data response: {}", self.0)
    }
}

impl std::error::Error for WireError {}

impl DataResponse {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(DATA_HEADER_LEN + 4 * self.values.len());
        out.extend_from_slice(DATA_MAGIC);
        out.push(DATA_VERSION);
        out.push(self.level);
        out.push(self.precision);
        out.push(self.counts.len() as u8);
        out.push(idxfabric::pipeline::DTYPE_F32);
        out.push(if self.downgraded { FLAG_DOWNGRADED } else { 0 });
        out.extend_from_slice(&[0; 6]);
        for a in 0..6 {
            out.extend_from_slice(&self.counts.get(a).copied().unwrap_or(0).to_le_bytes());
        }
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        if bytes.len() < DATA_HEADER_LEN {
            return Err(WireError(format!("{} bytes", bytes.len())));
        }
        if &bytes[0..4] != DATA_MAGIC || bytes[4] != DATA_VERSION {
            return Err(WireError("bad magic or version".into()));
        }
        let ndim = bytes[7] as usize;
        if ndim > 6 || bytes[8] != idxfabric::pipeline::DTYPE_F32 {
            return Err(WireError(format!("axes {ndim}, dtype {}", bytes[8])));
        }
        let counts: Vec<u64> =
            (0..ndim).map(|a| u64::from_le_bytes(bytes[16 + 8 * a..24 + 8 * a].try_into().unwrap())).collect();
        let payload = &bytes[DATA_HEADER_LEN..];
        let n: u64 = counts.iter().product();
        if payload.len() as u64 != 4 * n {
            return Err(WireError(format!("{} payload bytes for {n} samples", payload.len())));
        }
        Ok(Self {
            level: bytes[5],
            precision: bytes[6],
            downgraded: bytes[9] & FLAG_DOWNGRADED != 0,
            counts,
            values: idxfabric::codec::le_bytes_to_f32s(payload),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout() {
        let r = DataResponse { level: 9, precision: 16, downgraded: true, counts: vec![2, 3], values: vec![1.5; 6] };
        let b = r.encode();
        assert_eq!(b.len(), 64 + 24);
        assert_eq!(&b[0..4], b"IDXD");
        assert_eq!((b[5], b[6], b[7], b[8], b[9]), (9, 16, 2, 1, 1));
        assert_eq!(u64::from_le_bytes(b[24..32].try_into().unwrap()), 3);
        assert_eq!(DataResponse::decode(&b).unwrap(), r);
        assert!(DataResponse::decode(&b[..80]).is_err());
    }
}
