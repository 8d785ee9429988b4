//! 48-bit canonical virtual addresses and their per-level index fields.
//!
//! Three indexing schemes share the same upper bits:
//!
//! ```text
//!  47      39 38      30 29      21 20      12 11         0
//! +----------+----------+----------+----------+------------+
//! |    PL4   |    PL3   |    PL2   |    PL1   |   offset   |  radix
//! |    PL4   |    PL3   |        PL2/PL1      |   offset   |  flattened
//! |    PL4   |    PL3   |    PL2   |        offset21       |  2MB pages
//! +----------+----------+----------+----------+------------+
//! ```

use std::fmt;

use thiserror::Error;

/// Number of index bits consumed by one 512-entry table level.
pub const LEVEL_BITS: u32 = 9;
/// Entries in a regular (4KB) table node.
pub const LEVEL_ENTRIES: u64 = 1 << LEVEL_BITS;
/// Entries in a flattened PL2/PL1 node.
pub const FLAT_ENTRIES: u64 = 1 << (2 * LEVEL_BITS);

const VA_BITS: u32 = 48;
const LEVEL_MASK: u64 = LEVEL_ENTRIES - 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum AddrError {
    #[error("address {0:#x} is not in canonical 48-bit form")]
    NonCanonicalAddress(u64),
    #[error("{field} index {value:#x} out of range (limit {limit:#x})")]
    IndexOutOfRange {
        field: &'static str,
        value: u64,
        limit: u64,
    },
}

/// Page granularity of a translation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PageSize {
    Size4K,
    Size2M,
}

impl PageSize {
    pub const fn shift(self) -> u32 {
        match self {
            PageSize::Size4K => 12,
            PageSize::Size2M => 21,
        }
    }

    pub const fn bytes(self) -> u64 {
        1 << self.shift()
    }

    /// Number of 4KB frames covered by one page of this size.
    pub const fn frames(self) -> u64 {
        self.bytes() >> 12
    }
}

/// A canonical x86-64 virtual address (bits 48..63 sign-extend bit 47).
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VirtualAddress(u64);

impl VirtualAddress {
    pub fn new(value: u64) -> Result<Self, AddrError> {
        if is_canonical(value) {
            Ok(Self(value))
        } else {
            Err(AddrError::NonCanonicalAddress(value))
        }
    }

    /// Builds a canonical address from the low 48 bits of `value`,
    /// sign-extending bit 47.
    pub const fn from_low_bits(value: u64) -> Self {
        Self(sign_extend(value))
    }

    pub const fn value(self) -> u64 {
        self.0
    }

    /// Virtual page number at the given granularity.
    pub const fn page_number(self, size: PageSize) -> u64 {
        (self.0 & ((1 << VA_BITS) - 1)) >> size.shift()
    }

    pub const fn page_offset(self, size: PageSize) -> u64 {
        self.0 & (size.bytes() - 1)
    }

    pub fn split_radix(self) -> RadixIndices {
        let v = self.0;
        RadixIndices {
            i4: ((v >> 39) & LEVEL_MASK) as u16,
            i3: ((v >> 30) & LEVEL_MASK) as u16,
            i2: ((v >> 21) & LEVEL_MASK) as u16,
            i1: ((v >> 12) & LEVEL_MASK) as u16,
            offset: (v & 0xfff) as u16,
        }
    }

    pub fn split_flattened(self) -> FlatIndices {
        let v = self.0;
        FlatIndices {
            i4: ((v >> 39) & LEVEL_MASK) as u16,
            i3: ((v >> 30) & LEVEL_MASK) as u16,
            i21: ((v >> 12) & (FLAT_ENTRIES - 1)) as u32,
            offset: (v & 0xfff) as u16,
        }
    }

    pub fn split_huge(self) -> HugeIndices {
        let v = self.0;
        HugeIndices {
            i4: ((v >> 39) & LEVEL_MASK) as u16,
            i3: ((v >> 30) & LEVEL_MASK) as u16,
            i2: ((v >> 21) & LEVEL_MASK) as u16,
            offset21: (v & ((1 << 21) - 1)) as u32,
        }
    }
}

impl fmt::Debug for VirtualAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "VirtualAddress({:#x})", self.0)
    }
}

impl fmt::Display for VirtualAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#x}", self.0)
    }
}

impl fmt::LowerHex for VirtualAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::LowerHex::fmt(&self.0, f)
    }
}

impl TryFrom<u64> for VirtualAddress {
    type Error = AddrError;

    fn try_from(value: u64) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

const fn sign_extend(value: u64) -> u64 {
    (((value << (64 - VA_BITS)) as i64) >> (64 - VA_BITS)) as u64
}

pub const fn is_canonical(value: u64) -> bool {
    sign_extend(value) == value
}

/// A physical byte address.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct PhysicalAddress(u64);

impl PhysicalAddress {
    pub const fn new(value: u64) -> Self {
        Self(value)
    }

    /// `frame` is counted in units of `size`.
    pub const fn from_frame(frame: u64, size: PageSize, offset: u64) -> Self {
        Self((frame << size.shift()) | (offset & (size.bytes() - 1)))
    }

    pub const fn value(self) -> u64 {
        self.0
    }

    /// 4KB frame number containing this address.
    pub const fn frame_4k(self) -> u64 {
        self.0 >> 12
    }

    pub const fn line(self, line_bytes: u64) -> u64 {
        self.0 / line_bytes
    }
}

impl fmt::Debug for PhysicalAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PhysicalAddress({:#x})", self.0)
    }
}

impl fmt::Display for PhysicalAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#x}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RadixIndices {
    pub i4: u16,
    pub i3: u16,
    pub i2: u16,
    pub i1: u16,
    pub offset: u16,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FlatIndices {
    pub i4: u16,
    pub i3: u16,
    /// `(i2 << 9) | i1`.
    pub i21: u32,
    pub offset: u16,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct HugeIndices {
    pub i4: u16,
    pub i3: u16,
    pub i2: u16,
    /// Byte offset inside the 2MB page.
    pub offset21: u32,
}

fn check(field: &'static str, value: u64, limit: u64) -> Result<u64, AddrError> {
    if value < limit {
        Ok(value)
    } else {
        Err(AddrError::IndexOutOfRange { field, value, limit })
    }
}

impl RadixIndices {
    pub fn compose(&self) -> Result<VirtualAddress, AddrError> {
        let raw = check("i4", self.i4.into(), LEVEL_ENTRIES)? << 39
            | check("i3", self.i3.into(), LEVEL_ENTRIES)? << 30
            | check("i2", self.i2.into(), LEVEL_ENTRIES)? << 21
            | check("i1", self.i1.into(), LEVEL_ENTRIES)? << 12
            | check("offset", self.offset.into(), 1 << 12)?;
        Ok(VirtualAddress::from_low_bits(raw))
    }
}

impl FlatIndices {
    pub fn compose(&self) -> Result<VirtualAddress, AddrError> {
        let raw = check("i4", self.i4.into(), LEVEL_ENTRIES)? << 39
            | check("i3", self.i3.into(), LEVEL_ENTRIES)? << 30
            | check("i21", self.i21.into(), FLAT_ENTRIES)? << 12
            | check("offset", self.offset.into(), 1 << 12)?;
        Ok(VirtualAddress::from_low_bits(raw))
    }
}

impl HugeIndices {
    pub fn compose(&self) -> Result<VirtualAddress, AddrError> {
        let raw = check("i4", self.i4.into(), LEVEL_ENTRIES)? << 39
            | check("i3", self.i3.into(), LEVEL_ENTRIES)? << 30
            | check("i2", self.i2.into(), LEVEL_ENTRIES)? << 21
            | check("offset21", self.offset21.into(), 1 << 21)?;
        Ok(VirtualAddress::from_low_bits(raw))
    }
}

/// Checks canonical form and splits in one step.
pub fn split_radix(va: u64) -> Result<RadixIndices, AddrError> {
    VirtualAddress::new(va).map(VirtualAddress::split_radix)
}

pub fn split_flattened(va: u64) -> Result<FlatIndices, AddrError> {
    VirtualAddress::new(va).map(VirtualAddress::split_flattened)
}

pub fn split_huge(va: u64) -> Result<HugeIndices, AddrError> {
    VirtualAddress::new(va).map(VirtualAddress::split_huge)
}
