//! RAWV files: a 64-byte little-endian header followed by row-major float32 samples.
//!
//! | offset | size | field                      |
//! |--------|------|----------------------------|
//! | 0      | 4    | magic `RAWV`               |
//! | 4      | 1    | version (1)                |
//! | 5      | 1    | number of axes (1..=6)     |
//! | 6      | 1    | dtype code (1 = float32)   |
//! | 7      | 1    | reserved, zero             |
//! | 8      | 48   | six u64 extents, unused 0  |
//! | 56     | 4    | fill value, f32            |
//! | 60     | 4    | reserved, zero             |

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::PipelineError;
use crate::index::MAX_AXES;

pub const RAW_MAGIC: &[u8; 4] = b"RAWV";
pub const RAW_HEADER_LEN: usize = 64;
pub const DTYPE_F32: u8 = 1;

/// One field at one timestep, row-major over the declared axes (last fastest).
#[derive(Debug, Clone, PartialEq)]
pub struct RawVolume {
    pub field: String,
    pub timestep: u32,
    pub extents: Vec<u64>,
    pub fill: f32,
    pub data: Vec<f32>,
}

impl RawVolume {
    pub fn new(
        field: impl Into<String>,
        timestep: u32,
        extents: Vec<u64>,
        fill: f32,
        data: Vec<f32>,
    ) -> Result<Self, PipelineError> {
        if extents.is_empty() || extents.len() > MAX_AXES || extents.contains(&0) {
            return Err(PipelineError::ShapeMismatch(format!("bad extents {extents:?}")));
        }
        let n: u64 = extents.iter().product();
        if data.len() as u64 != n {
            return Err(PipelineError::ShapeMismatch(format!(
                "{} samples for extents {extents:?} ({n} expected)",
                data.len()
            )));
        }
        Ok(Self { field: field.into(), timestep, extents, fill, data })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn raw_bytes(&self) -> u64 {
        self.data.len() as u64 * 4
    }

    /// Row-major offset of `coords`.
    pub fn offset(&self, coords: &[u64]) -> usize {
        coords.iter().zip(&self.extents).fold(0u64, |acc, (c, e)| acc * e + c) as usize
    }

    pub fn get(&self, coords: &[u64]) -> f32 {
        self.data[self.offset(coords)]
    }

    pub fn read_from(mut r: impl Read) -> Result<Self, PipelineError> {
        let mut h = [0u8; RAW_HEADER_LEN];
        r.read_exact(&mut h).map_err(|e| PipelineError::BadRaw(format!("header: {e}")))?;
        if &h[0..4] != RAW_MAGIC {
            return Err(PipelineError::BadRaw("bad magic".into()));
        }
        if h[4] != 1 {
            return Err(PipelineError::BadRaw(format!("unsupported version {}", h[4])));
        }
        let ndim = h[5] as usize;
        if ndim == 0 || ndim > MAX_AXES {
            return Err(PipelineError::BadRaw(format!("bad axis count {ndim}")));
        }
        if h[6] != DTYPE_F32 {
            return Err(PipelineError::BadRaw(format!("unsupported dtype code {}", h[6])));
        }
        let extents: Vec<u64> =
            (0..ndim).map(|a| u64::from_le_bytes(h[8 + 8 * a..16 + 8 * a].try_into().unwrap())).collect();
        let fill = f32::from_le_bytes(h[56..60].try_into().unwrap());
        let n = extents
            .iter()
            .try_fold(1u64, |acc, e| acc.checked_mul(*e))
            .filter(|n| *n > 0 && *n <= (usize::MAX / 4) as u64)
            .ok_or_else(|| PipelineError::BadRaw(format!("bad extents {extents:?}")))?;
        let mut bytes = vec![0u8; n as usize * 4];
        r.read_exact(&mut bytes).map_err(|e| PipelineError::BadRaw(format!("payload: {e}")))?;
        let data = crate::codec::le_bytes_to_f32s(&bytes);
        Self::new("value", 0, extents, fill, data)
    }

    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        let mut h = [0u8; RAW_HEADER_LEN];
        h[0..4].copy_from_slice(RAW_MAGIC);
        h[4] = 1;
        h[5] = self.extents.len() as u8;
        h[6] = DTYPE_F32;
        for (a, e) in self.extents.iter().enumerate() {
            h[8 + 8 * a..16 + 8 * a].copy_from_slice(&e.to_le_bytes());
        }
        h[56..60].copy_from_slice(&self.fill.to_le_bytes());
        w.write_all(&h)?;
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        let f = File::open(path).map_err(|e| PipelineError::Io(format!("{}: {e}", path.display())))?;
        Self::read_from(BufReader::new(f))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), PipelineError> {
        let path = path.as_ref();
        let f = File::create(path).map_err(|e| PipelineError::Io(format!("{}: {e}", path.display())))?;
        self.write_to(BufWriter::new(f)).map_err(|e| PipelineError::Io(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let v = RawVolume::new("f", 0, vec![2, 3], -1.0, (0..6).map(|i| i as f32).collect()).unwrap();
        let mut buf = Vec::new();
        v.write_to(&mut buf).unwrap();
        assert_eq!(buf.len(), 64 + 24);
        assert_eq!(&buf[0..4], b"RAWV");
        assert_eq!(buf[5], 2);
        assert_eq!(u64::from_le_bytes(buf[8..16].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(buf[16..24].try_into().unwrap()), 3);
        assert_eq!(f32::from_le_bytes(buf[56..60].try_into().unwrap()), -1.0);
        assert_eq!(f32::from_le_bytes(buf[64 + 4 * 5..].try_into().unwrap()), 5.0);
        let back = RawVolume::read_from(&buf[..]).unwrap();
        assert_eq!(back.data, v.data);
        assert_eq!(back.extents, v.extents);
        assert_eq!(back.fill, -1.0);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(RawVolume::new("f", 0, vec![2, 2], 0.0, vec![0.0; 3]).is_err());
        assert!(RawVolume::new("f", 0, vec![0], 0.0, vec![]).is_err());
        let v = RawVolume::new("f", 0, vec![4], 0.0, vec![1.0; 4]).unwrap();
        let mut buf = Vec::new();
        v.write_to(&mut buf).unwrap();
        assert!(matches!(RawVolume::read_from(&buf[..70]), Err(PipelineError::BadRaw(_))));
        buf[0] = b'X';
        assert!(matches!(RawVolume::read_from(&buf[..]), Err(PipelineError::BadRaw(_))));
    }

    #[test]
    fn row_major_offsets() {
        let v = RawVolume::new("f", 0, vec![2, 3, 4], 0.0, vec![0.0; 24]).unwrap();
        assert_eq!(v.offset(&[0, 0, 1]), 1);
        assert_eq!(v.offset(&[0, 1, 0]), 4);
        assert_eq!(v.offset(&[1, 2, 3]), 23);
    }
}
