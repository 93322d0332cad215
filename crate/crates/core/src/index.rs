//! Generalized Morton (Z-order) and hierarchical Z (HZ) addressing.
//!
//! A [`BitPattern`] lists, from most to least significant bit, which axis
//! contributes the next bit of a Z address. HZ order regroups Z addresses by
//! resolution level so that a prefix `[0, 2^l)` of HZ space holds exactly the
//! samples of the level-`l` lattice.
//!
//! Everything here is a pure function of its inputs.

use std::fmt;
use std::ops::Range;

use thiserror::Error;

/// Addresses must fit a `u64` with headroom.
pub const MAX_BITS: u32 = 62;

/// Upper bound on the number of axes a pattern may name.
pub const MAX_AXES: usize = 6;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum IndexError {
    #[error("bit pattern needs {0} bits, at most {MAX_BITS} are addressable")]
    PatternTooLong(u32),
    #[error("invalid bit pattern: {0}")]
    InvalidPattern(String),
    #[error("coordinate {coord} on axis '{axis}' is outside [0, {limit})")]
    CoordOutOfRange { axis: char, coord: u64, limit: u64 },
    #[error("address {address} is outside [0, 2^{bits})")]
    AddressOutOfRange { address: u64, bits: u32 },
    #[error("level {level} is outside [0, {max}]")]
    LevelOutOfRange { level: u32, max: u32 },
    #[error("box is empty")]
    EmptyBox,
    #[error("box does not fit the domain: {0}")]
    BoxOutOfDomain(String),
}

pub type Result<T, E = IndexError> = std::result::Result<T, E>;

/// Interleaving schedule of a Z address, most significant bit first.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BitPattern {
    axes: Vec<char>,
    positions: Vec<u8>,
    bits: Vec<u32>,
}

impl BitPattern {
    /// Parses an explicit pattern string such as `"xyzxyzxy"` over the declared axes.
    ///
    /// Axes that never appear get zero bits (extent 1 once padded).
    pub fn new(axes: &[char], pattern: &str) -> Result<Self> {
        if axes.is_empty() || axes.len() > MAX_AXES {
            return Err(IndexError::InvalidPattern(format!("expected 1..={MAX_AXES} axes, got {}", axes.len())));
        }
        for (i, a) in axes.iter().enumerate() {
            if axes[..i].contains(a) {
                return Err(IndexError::InvalidPattern(format!("axis '{a}' declared twice")));
            }
        }
        let len = pattern.chars().count() as u32;
        if len > MAX_BITS {
            return Err(IndexError::PatternTooLong(len));
        }
        let mut positions = Vec::with_capacity(len as usize);
        let mut bits = vec![0u32; axes.len()];
        for label in pattern.chars() {
            let axis = axes
                .iter()
                .position(|a| *a == label)
                .ok_or_else(|| IndexError::InvalidPattern(format!("label '{label}' is not a declared axis")))?;
            positions.push(axis as u8);
            bits[axis] += 1;
        }
        Ok(Self { axes: axes.to_vec(), positions, bits })
    }

    /// Round-robin pattern, MSB first, cycling axes in declaration order and
    /// skipping axes whose bits are used up.
    pub fn round_robin(bits_per_axis: &[(char, u32)]) -> Result<Self> {
        let total: u32 = bits_per_axis.iter().map(|(_, n)| *n).sum();
        if total > MAX_BITS {
            return Err(IndexError::PatternTooLong(total));
        }
        if total == 0 {
            return Err(IndexError::InvalidPattern("no axis has any bits".into()));
        }
        let axes: Vec<char> = bits_per_axis.iter().map(|(a, _)| *a).collect();
        let mut remaining: Vec<u32> = bits_per_axis.iter().map(|(_, n)| *n).collect();
        let mut pattern = String::with_capacity(total as usize);
        while remaining.iter().any(|r| *r > 0) {
            for (i, r) in remaining.iter_mut().enumerate() {
                if *r > 0 {
                    pattern.push(axes[i]);
                    *r -= 1;
                }
            }
        }
        Self::new(&axes, &pattern)
    }

    /// Total address bits `m`.
    pub fn total_bits(&self) -> u32 {
        self.positions.len() as u32
    }

    pub fn axes(&self) -> &[char] {
        &self.axes
    }

    pub fn ndim(&self) -> usize {
        self.axes.len()
    }

    /// Bits owned by axis `axis` (its padded extent is `2^bits`).
    pub fn axis_bits(&self, axis: usize) -> u32 {
        self.bits[axis]
    }

    pub fn padded_extent(&self, axis: usize) -> u64 {
        1u64 << self.bits[axis]
    }

    pub fn padded_extents(&self) -> Vec<u64> {
        (0..self.ndim()).map(|a| self.padded_extent(a)).collect()
    }

    /// Axis index owning each bit position, MSB first.
    pub fn positions(&self) -> &[u8] {
        &self.positions
    }

    /// Number of bits of `axis` among the `low` least significant positions.
    pub fn low_bits_of_axis(&self, axis: usize, low: u32) -> u32 {
        let m = self.positions.len();
        self.positions[m - low as usize..].iter().filter(|p| **p as usize == axis).count() as u32
    }
}

impl fmt::Display for BitPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in &self.positions {
            write!(f, "{}", self.axes[*p as usize])?;
        }
        Ok(())
    }
}

/// Builds the default round-robin pattern for per-axis bit counts.
pub fn default_pattern(bits_per_axis: &[(char, u32)]) -> Result<BitPattern> {
    BitPattern::round_robin(bits_per_axis)
}

/// Bits needed to index `extent` samples after padding to a power of two.
pub fn bits_for_extent(extent: u64) -> u32 {
    if extent <= 1 {
        0
    } else {
        64 - (extent - 1).leading_zeros()
    }
}

/// Interleaves per-axis coordinates into a Z address.
pub fn morton_encode(coords: &[u64], pattern: &BitPattern) -> Result<u64> {
    check_coords(coords, pattern)?;
    let mut used = vec![0u32; pattern.ndim()];
    let mut z = 0u64;
    for &axis in pattern.positions() {
        let axis = axis as usize;
        used[axis] += 1;
        let bit = (coords[axis] >> (pattern.bits[axis] - used[axis])) & 1;
        z = (z << 1) | bit;
    }
    Ok(z)
}

/// Inverse of [`morton_encode`].
pub fn morton_decode(z: u64, pattern: &BitPattern) -> Result<Vec<u64>> {
    check_address(z, pattern.total_bits())?;
    let m = pattern.total_bits();
    let mut coords = vec![0u64; pattern.ndim()];
    for (j, &axis) in pattern.positions().iter().enumerate() {
        let bit = (z >> (m - 1 - j as u32)) & 1;
        let c = &mut coords[axis as usize];
        *c = (*c << 1) | bit;
    }
    Ok(coords)
}

fn check_coords(coords: &[u64], pattern: &BitPattern) -> Result<()> {
    if coords.len() != pattern.ndim() {
        return Err(IndexError::InvalidPattern(format!(
            "expected {} coordinates, got {}",
            pattern.ndim(),
            coords.len()
        )));
    }
    for (a, &c) in coords.iter().enumerate() {
        let limit = pattern.padded_extent(a);
        if c >= limit {
            return Err(IndexError::CoordOutOfRange { axis: pattern.axes[a], coord: c, limit });
        }
    }
    Ok(())
}

fn check_address(address: u64, bits: u32) -> Result<()> {
    if bits < 64 && address >> bits != 0 {
        return Err(IndexError::AddressOutOfRange { address, bits });
    }
    Ok(())
}

/// Resolution level of a Z address in an `m`-bit space.
#[inline]
pub fn level_of(z: u64, m: u32) -> u32 {
    if z == 0 {
        0
    } else {
        m - z.trailing_zeros()
    }
}

/// Maps a Z address to `(level, hz)`.
pub fn hz_of(z: u64, m: u32) -> Result<(u32, u64)> {
    check_address(z, m)?;
    Ok(hz_of_unchecked(z, m))
}

#[inline]
pub(crate) fn hz_of_unchecked(z: u64, m: u32) -> (u32, u64) {
    if z == 0 {
        return (0, 0);
    }
    let tz = z.trailing_zeros();
    let level = m - tz;
    (level, (1u64 << (level - 1)) + (z >> (tz + 1)))
}

/// Inverse of [`hz_of`].
pub fn z_of(hz: u64, m: u32) -> Result<u64> {
    check_address(hz, m)?;
    Ok(z_of_unchecked(hz, m))
}

#[inline]
pub(crate) fn z_of_unchecked(hz: u64, m: u32) -> u64 {
    if hz == 0 {
        return 0;
    }
    let level = 64 - hz.leading_zeros();
    let offset = hz - (1u64 << (level - 1));
    (offset << (m - level + 1)) | (1u64 << (m - level))
}

/// Level of an HZ address (its position in the coarse-to-fine grouping).
#[inline]
pub fn level_of_hz(hz: u64) -> u32 {
    64 - hz.leading_zeros()
}

/// Sample lattice of one resolution level over the padded domain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LevelGrid {
    pub level: u32,
    pub strides: Vec<u64>,
    pub counts: Vec<u64>,
}

impl LevelGrid {
    pub fn total_samples(&self) -> u64 {
        self.counts.iter().product()
    }

    /// First lattice coordinate and lattice count on `axis` within `[lo, hi)`.
    pub fn axis_span(&self, axis: usize, range: &Range<u64>) -> (u64, u64) {
        let s = self.strides[axis];
        let first = range.start.div_ceil(s);
        let end = range.end.div_ceil(s);
        (first * s, end.saturating_sub(first))
    }

    /// Lattice counts of this grid inside `region`.
    pub fn counts_in(&self, region: &Region) -> Vec<u64> {
        (0..self.strides.len()).map(|a| self.axis_span(a, &region.ranges[a]).1).collect()
    }

    /// Whether `coords` lies on this lattice.
    pub fn contains(&self, coords: &[u64]) -> bool {
        coords.iter().zip(&self.strides).all(|(c, s)| c % s == 0)
    }
}

/// Lattice of samples with level `<= level`.
pub fn level_grid(pattern: &BitPattern, level: u32) -> Result<LevelGrid> {
    let m = pattern.total_bits();
    if level > m {
        return Err(IndexError::LevelOutOfRange { level, max: m });
    }
    let low = m - level;
    let strides: Vec<u64> = (0..pattern.ndim()).map(|a| 1u64 << pattern.low_bits_of_axis(a, low)).collect();
    let counts = strides.iter().enumerate().map(|(a, s)| pattern.padded_extent(a) / s).collect();
    Ok(LevelGrid { level, strides, counts })
}

/// Axis-aligned box of half-open per-axis sample ranges.
#[derive(Debug, Clone, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct Region {
    pub ranges: Vec<Range<u64>>,
}

impl Region {
    pub fn new(ranges: Vec<Range<u64>>) -> Self {
        Self { ranges }
    }

    pub fn full(extents: &[u64]) -> Self {
        Self { ranges: extents.iter().map(|e| 0..*e).collect() }
    }

    pub fn ndim(&self) -> usize {
        self.ranges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranges.iter().any(|r| r.start >= r.end)
    }

    pub fn contains(&self, coords: &[u64]) -> bool {
        self.ranges.iter().zip(coords).all(|(r, c)| r.contains(c))
    }

    /// Checks the box is non-empty and inside `extents`.
    pub fn validate(&self, extents: &[u64]) -> Result<()> {
        if self.ranges.len() != extents.len() {
            return Err(IndexError::BoxOutOfDomain(format!(
                "box has {} axes, domain has {}",
                self.ranges.len(),
                extents.len()
            )));
        }
        if self.is_empty() {
            return Err(IndexError::EmptyBox);
        }
        for (a, (r, e)) in self.ranges.iter().zip(extents).enumerate() {
            if r.end > *e {
                return Err(IndexError::BoxOutOfDomain(format!(
                    "axis {a}: [{}, {}) exceeds extent {e}",
                    r.start, r.end
                )));
            }
        }
        Ok(())
    }
}

/// Table-driven Morton encoder; one lookup per coordinate byte.
#[derive(Debug, Clone)]
pub struct ZEncoder {
    m: u32,
    // tables[axis][byte] -> 256 partial Z contributions
    tables: Vec<Vec<[u64; 256]>>,
}

impl ZEncoder {
    pub fn new(pattern: &BitPattern) -> Self {
        let m = pattern.total_bits();
        // destination bit of every coordinate bit, per axis, LSB first
        let mut dest: Vec<Vec<u32>> = vec![Vec::new(); pattern.ndim()];
        for (j, &axis) in pattern.positions().iter().enumerate().rev() {
            dest[axis as usize].push(m - 1 - j as u32);
        }
        let tables = dest
            .iter()
            .map(|d| {
                let nbytes = d.len().div_ceil(8);
                (0..nbytes)
                    .map(|byte| {
                        let mut t = [0u64; 256];
                        for (v, slot) in t.iter_mut().enumerate() {
                            for bit in 0..8 {
                                let src = byte * 8 + bit;
                                if src < d.len() && (v >> bit) & 1 == 1 {
                                    *slot |= 1u64 << d[src];
                                }
                            }
                        }
                        t
                    })
                    .collect()
            })
            .collect();
        Self { m, tables }
    }

    pub fn total_bits(&self) -> u32 {
        self.m
    }

    /// Z contribution of one axis coordinate. Coordinates must be in range.
    #[inline]
    pub fn axis_part(&self, axis: usize, coord: u64) -> u64 {
        let mut z = 0;
        for (byte, table) in self.tables[axis].iter().enumerate() {
            z |= table[((coord >> (8 * byte)) & 0xff) as usize];
        }
        z
    }

    #[inline]
    pub fn encode(&self, coords: &[u64]) -> u64 {
        coords.iter().enumerate().fold(0, |z, (a, c)| z | self.axis_part(a, *c))
    }
}

/// Visits the OR-combinations of per-axis Z contributions in row-major order
/// (last axis fastest).
pub fn for_each_z(parts: &[Vec<u64>], mut f: impl FnMut(u64)) {
    if parts.is_empty() || parts.iter().any(|p| p.is_empty()) {
        return;
    }
    let d = parts.len();
    let mut idx = vec![0usize; d];
    // prefix[a] = OR of parts[0..a] at the current indices
    let mut prefix = vec![0u64; d];
    for a in 1..d {
        prefix[a] = prefix[a - 1] | parts[a - 1][0];
    }
    let last = &parts[d - 1];
    loop {
        let base = prefix[d - 1];
        for &p in last {
            f(base | p);
        }
        // advance the odometer over axes 0..d-1
        let mut a = d - 1;
        loop {
            if a == 0 {
                return;
            }
            a -= 1;
            idx[a] += 1;
            if idx[a] < parts[a].len() {
                break;
            }
            idx[a] = 0;
        }
        for b in (a + 1)..d {
            prefix[b] = prefix[b - 1] | parts[b - 1][idx[b - 1]];
        }
    }
}

/// Per-axis Z contributions of the level lattice points inside `region`.
pub fn lattice_parts(encoder: &ZEncoder, grid: &LevelGrid, region: &Region) -> Vec<Vec<u64>> {
    (0..grid.strides.len())
        .map(|a| {
            let (first, count) = grid.axis_span(a, &region.ranges[a]);
            let s = grid.strides[a];
            (0..count).map(|i| encoder.axis_part(a, first + i * s)).collect()
        })
        .collect()
}

/// Blocks (groups of `2^block_bits` consecutive HZ addresses) touched by the
/// level-`level` lattice points inside `region`, ascending.
pub fn blocks_for_box(region: &Region, level: u32, pattern: &BitPattern, block_bits: u32) -> Result<Vec<u64>> {
    let m = pattern.total_bits();
    if block_bits > m {
        return Err(IndexError::LevelOutOfRange { level: block_bits, max: m });
    }
    region.validate(&pattern.padded_extents())?;
    let grid = level_grid(pattern, level)?;
    let encoder = ZEncoder::new(pattern);
    let parts = lattice_parts(&encoder, &grid, region);
    Ok(collect_blocks(&parts, m, block_bits))
}

pub(crate) fn collect_blocks(parts: &[Vec<u64>], m: u32, block_bits: u32) -> Vec<u64> {
    let nblocks_bits = m - block_bits;
    if nblocks_bits <= 28 {
        let n = 1usize << nblocks_bits;
        let mut seen = vec![0u64; n.div_ceil(64)];
        for_each_z(parts, |z| {
            let b = (hz_of_unchecked(z, m).1 >> block_bits) as usize;
            seen[b / 64] |= 1 << (b % 64);
        });
        let mut out = Vec::new();
        for (w, word) in seen.iter().enumerate() {
            let mut bits = *word;
            while bits != 0 {
                let t = bits.trailing_zeros() as usize;
                out.push((w * 64 + t) as u64);
                bits &= bits - 1;
            }
        }
        out
    } else {
        let mut out = Vec::new();
        for_each_z(parts, |z| {
            let b = hz_of_unchecked(z, m).1 >> block_bits;
            if out.last() != Some(&b) {
                out.push(b);
            }
        });
        out.sort_unstable();
        out.dedup();
        out
    }
}
