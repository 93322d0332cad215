//! Block payload codecs, the block envelope framing, and quality metrics.
//!
//! Envelope layout (little-endian, 30-byte header followed by the payload):
//!
//! | offset | size | field                         |
//! |--------|------|-------------------------------|
//! | 0      | 4    | magic `IDXB`                  |
//! | 4      | 1    | version (1)                   |
//! | 5      | 1    | codec id                      |
//! | 6      | 1    | precision bits                |
//! | 7      | 1    | reserved, zero                |
//! | 8      | 8    | raw length                    |
//! | 16     | 8    | encoded length                |
//! | 24     | 4    | CRC-32 of the encoded payload |
//! | 28     | 2    | reserved, zero                |

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use flate2::read::DeflateDecoder;
use flate2::write::DeflateEncoder;
use flate2::Compression;
use thiserror::Error;

pub const ENVELOPE_MAGIC: &[u8; 4] = b"IDXB";
pub const ENVELOPE_VERSION: u8 = 1;
pub const ENVELOPE_HEADER_LEN: usize = 30;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("cannot encode an empty block")]
    EmptyInput,
    #[error("corrupt compressed stream: {0}")]
    CorruptStream(String),
    #[error("precision {0} is outside [1, 32]")]
    PrecisionOutOfRange(u32),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("value range is zero or not finite")]
    DegenerateRange,
    #[error("sizes must be positive")]
    ZeroSize,
    #[error("bad envelope magic")]
    BadMagic,
    #[error("unsupported envelope version {0}")]
    BadVersion(u8),
    #[error("unknown codec id {0}")]
    UnknownCodec(u8),
    #[error("crc mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    CrcMismatch { stored: u32, computed: u32 },
    #[error("truncated envelope: {0}")]
    Truncated(String),
    #[error("invalid codec spec '{0}'")]
    BadSpec(String),
}

pub type Result<T, E = CodecError> = std::result::Result<T, E>;

/// Codec applied to a block payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CodecSpec {
    Raw,
    Lossless,
    /// Keep the top `p` bits of every float32, then deflate.
    Truncate(u8),
}

impl CodecSpec {
    pub fn truncate(bits: u32) -> Result<Self> {
        if !(1..=32).contains(&bits) {
            return Err(CodecError::PrecisionOutOfRange(bits));
        }
        Ok(Self::Truncate(bits as u8))
    }

    pub fn id(&self) -> u8 {
        match self {
            Self::Raw => 0,
            Self::Lossless => 1,
            Self::Truncate(_) => 2,
        }
    }

    /// Bits of float32 precision kept by this codec.
    pub fn precision(&self) -> u32 {
        match self {
            Self::Raw | Self::Lossless => 32,
            Self::Truncate(p) => *p as u32,
        }
    }

    pub fn is_lossy(&self) -> bool {
        self.precision() < 32
    }

    fn from_header(id: u8, precision: u8) -> Result<Self> {
        match id {
            0 => Ok(Self::Raw),
            1 => Ok(Self::Lossless),
            2 => Self::truncate(precision as u32),
            other => Err(CodecError::UnknownCodec(other)),
        }
    }
}

impl fmt::Display for CodecSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Raw => f.write_str("raw"),
            Self::Lossless => f.write_str("lossless"),
            Self::Truncate(p) => write!(f, "truncate-{p}"),
        }
    }
}

impl FromStr for CodecSpec {
    type Err = CodecError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(Self::Raw),
            "lossless" | "deflate" => Ok(Self::Lossless),
            _ => {
                let bits = s
                    .strip_prefix("truncate-")
                    .and_then(|p| p.parse::<u32>().ok())
                    .ok_or_else(|| CodecError::BadSpec(s.to_string()))?;
                Self::truncate(bits)
            }
        }
    }
}

impl serde::Serialize for CodecSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> serde::Deserialize<'de> for CodecSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

pub fn deflate_encode(bytes: &[u8]) -> Result<Vec<u8>> {
    if bytes.is_empty() {
        return Err(CodecError::EmptyInput);
    }
    let mut enc = DeflateEncoder::new(Vec::with_capacity(bytes.len() / 2), Compression::default());
    enc.write_all(bytes).expect("writing to a Vec cannot fail");
    Ok(enc.finish().expect("writing to a Vec cannot fail"))
}

pub fn deflate_decode(bytes: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    DeflateDecoder::new(bytes).read_to_end(&mut out).map_err(|e| CodecError::CorruptStream(e.to_string()))?;
    Ok(out)
}

/// Inflates at most `limit + 1` bytes so a hostile stream cannot balloon.
fn deflate_decode_bounded(bytes: &[u8], limit: usize) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(limit);
    DeflateDecoder::new(bytes)
        .take(limit as u64 + 1)
        .read_to_end(&mut out)
        .map_err(|e| CodecError::CorruptStream(e.to_string()))?;
    Ok(out)
}

#[inline]
fn precision_mask(p: u32) -> u32 {
    if p >= 32 {
        u32::MAX
    } else {
        u32::MAX << (32 - p)
    }
}

/// Zeroes all but the top `p` bits of each float's bit pattern.
pub fn truncate_precision(samples: &[f32], p: u32) -> Result<Vec<f32>> {
    if !(1..=32).contains(&p) {
        return Err(CodecError::PrecisionOutOfRange(p));
    }
    let mask = precision_mask(p);
    Ok(samples.iter().map(|v| f32::from_bits(v.to_bits() & mask)).collect())
}

fn truncate_bytes(raw: &[u8], p: u32) -> Vec<u8> {
    let mask = precision_mask(p);
    let mut out = raw.to_vec();
    for chunk in out.chunks_exact_mut(4) {
        let v = u32::from_le_bytes(chunk.try_into().unwrap()) & mask;
        chunk.copy_from_slice(&v.to_le_bytes());
    }
    out
}

/// Peak signal-to-noise ratio in dB, using the original's value range as peak.
/// Exact reconstructions report `f64::INFINITY`.
pub fn psnr(original: &[f32], reconstructed: &[f32]) -> Result<f64> {
    if original.len() != reconstructed.len() {
        return Err(CodecError::LengthMismatch(original.len(), reconstructed.len()));
    }
    if original.len() < 2 {
        return Err(CodecError::LengthMismatch(original.len(), 2));
    }
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut sq = 0.0f64;
    for (a, b) in original.iter().zip(reconstructed) {
        let a = *a as f64;
        lo = lo.min(a);
        hi = hi.max(a);
        let d = a - *b as f64;
        sq += d * d;
    }
    let range = hi - lo;
    if !(range > 0.0 && range.is_finite()) {
        return Err(CodecError::DegenerateRange);
    }
    let rmse = (sq / original.len() as f64).sqrt();
    if rmse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(20.0 * (range / rmse).log10())
}

/// Ratio of raw to encoded size.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct CompressionFactor(pub f64);

impl CompressionFactor {
    /// Value rounded to the two decimals it is reported with.
    pub fn rounded(&self) -> f64 {
        (self.0 * 100.0).round() / 100.0
    }
}

impl fmt::Display for CompressionFactor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2}", self.0)
    }
}

pub fn compression_factor(raw_bytes: f64, encoded_bytes: f64) -> Result<CompressionFactor> {
    if !(raw_bytes > 0.0 && encoded_bytes > 0.0) {
        return Err(CodecError::ZeroSize);
    }
    Ok(CompressionFactor(raw_bytes / encoded_bytes))
}

/// Parsed envelope header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnvelopeHeader {
    pub codec: CodecSpec,
    pub raw_len: u64,
    pub encoded_len: u64,
    pub crc: u32,
}

impl EnvelopeHeader {
    /// Parses and sanity-checks the header without touching the payload.
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < ENVELOPE_HEADER_LEN {
            return Err(CodecError::Truncated(format!("{} header bytes", bytes.len())));
        }
        if &bytes[0..4] != ENVELOPE_MAGIC {
            return Err(CodecError::BadMagic);
        }
        if bytes[4] != ENVELOPE_VERSION {
            return Err(CodecError::BadVersion(bytes[4]));
        }
        let codec = CodecSpec::from_header(bytes[5], bytes[6])?;
        let raw_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let encoded_len = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
        let crc = u32::from_le_bytes(bytes[24..28].try_into().unwrap());
        let payload = (bytes.len() - ENVELOPE_HEADER_LEN) as u64;
        if payload != encoded_len {
            return Err(CodecError::Truncated(format!("header says {encoded_len} payload bytes, found {payload}")));
        }
        Ok(Self { codec, raw_len, encoded_len, crc })
    }

    fn write(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(ENVELOPE_MAGIC);
        out.push(ENVELOPE_VERSION);
        out.push(self.codec.id());
        out.push(self.codec.precision() as u8);
        out.push(0);
        out.extend_from_slice(&self.raw_len.to_le_bytes());
        out.extend_from_slice(&self.encoded_len.to_le_bytes());
        out.extend_from_slice(&self.crc.to_le_bytes());
        out.extend_from_slice(&[0, 0]);
    }
}

/// Encodes `raw` with `codec` and frames it.
pub fn pack_envelope(codec: CodecSpec, raw: &[u8]) -> Result<Vec<u8>> {
    if raw.is_empty() {
        return Err(CodecError::EmptyInput);
    }
    let payload = match codec {
        CodecSpec::Raw => raw.to_vec(),
        CodecSpec::Lossless => deflate_encode(raw)?,
        CodecSpec::Truncate(p) => {
            if raw.len() % 4 != 0 {
                return Err(CodecError::LengthMismatch(raw.len(), raw.len() / 4 * 4));
            }
            deflate_encode(&truncate_bytes(raw, p as u32))?
        }
    };
    let header = EnvelopeHeader {
        codec,
        raw_len: raw.len() as u64,
        encoded_len: payload.len() as u64,
        crc: crc32fast::hash(&payload),
    };
    let mut out = Vec::with_capacity(ENVELOPE_HEADER_LEN + payload.len());
    header.write(&mut out);
    out.extend_from_slice(&payload);
    Ok(out)
}

/// Checks the header and payload checksum without decoding.
pub fn verify_envelope(bytes: &[u8]) -> Result<EnvelopeHeader> {
    let header = EnvelopeHeader::parse(bytes)?;
    let computed = crc32fast::hash(&bytes[ENVELOPE_HEADER_LEN..]);
    if computed != header.crc {
        return Err(CodecError::CrcMismatch { stored: header.crc, computed });
    }
    Ok(header)
}

/// Validates the checksum and decodes the payload.
pub fn unpack_envelope(bytes: &[u8]) -> Result<(CodecSpec, Vec<u8>)> {
    let header = verify_envelope(bytes)?;
    let payload = &bytes[ENVELOPE_HEADER_LEN..];
    let raw_len = header.raw_len as usize;
    let raw = match header.codec {
        CodecSpec::Raw => payload.to_vec(),
        CodecSpec::Lossless | CodecSpec::Truncate(_) => deflate_decode_bounded(payload, raw_len)?,
    };
    if raw.len() != raw_len {
        return Err(CodecError::CorruptStream(format!("decoded {} bytes, header says {raw_len}", raw.len())));
    }
    Ok((header.codec, raw))
}

pub fn f32s_to_le_bytes(values: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * 4);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn le_bytes_to_f32s(bytes: &[u8]) -> Vec<f32> {
    bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect()
}

/// Unpacks an envelope holding float32 samples.
pub fn unpack_f32_block(bytes: &[u8]) -> Result<Vec<f32>> {
    let (_, raw) = unpack_envelope(bytes)?;
    if raw.len() % 4 != 0 {
        return Err(CodecError::CorruptStream(format!("{} bytes is not float32 data", raw.len())));
    }
    Ok(le_bytes_to_f32s(&raw))
}
