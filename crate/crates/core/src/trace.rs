//! Memory-access traces: the text format and synthetic generators.
//!
//! A trace is UTF-8 text, one record per line:
//!
//! ```text
//! # comment
//! 0 R 0x100000001000
//! 1 W 0x100040002ff8
//! ```
//!
//! Fields are `<core> <R|W> <virtual address>` separated by single spaces.
//! Core ids are decimal, addresses are `0x`-prefixed lowercase hex. Lines
//! starting with `#` are ignored.

use std::fmt::Write as _;

use clap::ValueEnum;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::addr::{is_canonical, VirtualAddress};
use crate::memhier::Rw;

pub const DEFAULT_BASE: u64 = 0x0000_1000_0000_0000;

const PAGE: u64 = 4096;
const CORE_REGION_ALIGN: u64 = 1 << 30;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TraceError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: address {value:#x} is not canonical")]
    NonCanonicalAddress { line: usize, value: u64 },
    #[error("invalid generator spec: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TraceRecord {
    pub core: u16,
    pub rw: Rw,
    pub va: VirtualAddress,
}

impl TraceRecord {
    pub fn new(core: u16, rw: Rw, va: VirtualAddress) -> Self {
        Self { core, rw, va }
    }
}

pub fn parse_trace(text: &str) -> Result<Vec<TraceRecord>, TraceError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.starts_with('#') {
            continue;
        }
        out.push(parse_line(raw, line)?);
    }
    Ok(out)
}

fn parse_line(raw: &str, line: usize) -> Result<TraceRecord, TraceError> {
    let err = |message: String| TraceError::Parse { line, message };
    let mut fields = raw.split(' ');
    let (Some(core), Some(op), Some(addr), None) = (fields.next(), fields.next(), fields.next(), fields.next()) else {
        return Err(err(format!("expected `<core> <R|W> <0xaddr>`, got {raw:?}")));
    };
    if core.is_empty() || !core.bytes().all(|b| b.is_ascii_digit()) {
        return Err(err(format!("invalid core id {core:?}")));
    }
    let core = core
        .parse::<u16>()
        .map_err(|e| err(format!("invalid core id {core:?}: {e}")))?;
    let rw = match op {
        "R" => Rw::Read,
        "W" => Rw::Write,
        other => return Err(err(format!("invalid operation {other:?} (expected R or W)"))),
    };
    let hex = addr
        .strip_prefix("0x")
        .filter(|h| !h.is_empty() && h.bytes().all(|b| b.is_ascii_hexdigit()))
        .ok_or_else(|| err(format!("invalid address {addr:?}")))?;
    let value = u64::from_str_radix(hex, 16).map_err(|e| err(format!("invalid address {addr:?}: {e}")))?;
    let va = VirtualAddress::new(value).map_err(|_| TraceError::NonCanonicalAddress { line, value })?;
    Ok(TraceRecord { core, rw, va })
}

pub fn write_trace(records: &[TraceRecord]) -> String {
    let mut out = String::with_capacity(records.len() * 20);
    for r in records {
        let op = match r.rw {
            Rw::Read => 'R',
            Rw::Write => 'W',
        };
        writeln!(out, "{} {} {:#x}", r.core, op, r.va).expect("writing to a String cannot fail");
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum GeneratorKind {
    /// Uniformly random 8-byte accesses over the footprint.
    Gups,
    /// Sequential 64-byte strides, wrapping at the end of the footprint.
    Stream,
    /// Pointer chasing along one random cycle through all pages.
    Linked,
    /// Pages drawn with Zipf-distributed popularity.
    Zipf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub kind: GeneratorKind,
    /// Footprint per core, in 4KB pages.
    pub pages: u64,
    /// Records per core.
    pub accesses: u64,
    pub cores: u16,
    pub seed: u64,
    pub zipf_s: f64,
    pub write_fraction: f64,
    pub base: u64,
    /// All cores draw from one region instead of private ones.
    pub shared_footprint: bool,
    /// Every core replays the same offsets inside its own region.
    pub replicate: bool,
}

impl GeneratorSpec {
    pub fn new(kind: GeneratorKind, pages: u64, accesses: u64) -> Self {
        Self {
            kind,
            pages,
            accesses,
            cores: 1,
            seed: 0,
            zipf_s: 0.99,
            write_fraction: 0.5,
            base: DEFAULT_BASE,
            shared_footprint: false,
            replicate: false,
        }
    }

    pub fn footprint_bytes(&self) -> u64 {
        self.pages * PAGE
    }

    /// Distance between consecutive cores' regions.
    pub fn region_stride(&self) -> u64 {
        if self.shared_footprint {
            0
        } else {
            self.footprint_bytes().next_multiple_of(CORE_REGION_ALIGN)
        }
    }

    pub fn core_base(&self, core: u16) -> u64 {
        self.base + u64::from(core) * self.region_stride()
    }

    fn validate(&self) -> Result<(), TraceError> {
        let bad = |m: &str| Err(TraceError::InvalidSpec(m.to_string()));
        if self.pages == 0 {
            return bad("pages must be at least 1");
        }
        if self.accesses == 0 {
            return bad("accesses must be at least 1");
        }
        if self.cores == 0 {
            return bad("cores must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.write_fraction) {
            return bad("write fraction must lie in [0, 1]");
        }
        if !self.zipf_s.is_finite() || self.zipf_s < 0.0 {
            return bad("zipf exponent must be finite and non-negative");
        }
        if !self.base.is_multiple_of(PAGE) {
            return bad("base must be 4KB aligned");
        }
        let end = self.pages.checked_mul(PAGE).and_then(|footprint| {
            let stride = if self.shared_footprint {
                0
            } else {
                footprint.checked_next_multiple_of(CORE_REGION_ALIGN)?
            };
            stride
                .checked_mul(u64::from(self.cores - 1))?
                .checked_add(self.base)?
                .checked_add(footprint)
        });
        match end {
            Some(end) if is_canonical(self.base) && end <= 1 << 47 => Ok(()),
            _ => bad("footprint does not fit in the lower canonical half"),
        }
    }
}

/// Generates records for all cores, interleaved round-robin by core.
pub fn generate(spec: &GeneratorSpec) -> Result<Vec<TraceRecord>, TraceError> {
    spec.validate()?;
    let per_core: Vec<Vec<TraceRecord>> = (0..spec.cores)
        .map(|core| generate_core(spec, core))
        .collect::<Result<_, _>>()?;
    let mut out = Vec::with_capacity((spec.accesses * u64::from(spec.cores)) as usize);
    for i in 0..spec.accesses as usize {
        out.extend(per_core.iter().map(|c| c[i]));
    }
    Ok(out)
}

fn generate_core(spec: &GeneratorSpec, core: u16) -> Result<Vec<TraceRecord>, TraceError> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    if !spec.replicate {
        rng.set_stream(u64::from(core));
    }
    let base = spec.core_base(core);
    let span = spec.footprint_bytes();
    let n = spec.accesses as usize;

    let offsets: Vec<u64> = match spec.kind {
        GeneratorKind::Gups => (0..n).map(|_| rng.random_range(0..span) & !7).collect(),
        GeneratorKind::Stream => (0..n as u64).map(|i| (i * 64) % span).collect(),
        GeneratorKind::Linked => {
            let mut order: Vec<u64> = (0..spec.pages).collect();
            order.shuffle(&mut rng);
            let node: Vec<u64> = (0..spec.pages).map(|_| rng.random_range(0..PAGE) & !7).collect();
            (0..n)
                .map(|i| {
                    let page = order[i % order.len()];
                    page * PAGE + node[page as usize]
                })
                .collect()
        }
        GeneratorKind::Zipf => {
            let zipf =
                Zipf::new(spec.pages as f64, spec.zipf_s).map_err(|e| TraceError::InvalidSpec(format!("zipf: {e}")))?;
            let mut rank_to_page: Vec<u64> = (0..spec.pages).collect();
            rank_to_page.shuffle(&mut rng);
            (0..n)
                .map(|_| {
                    let rank = zipf.sample(&mut rng) as u64;
                    let page = rank_to_page[(rank.clamp(1, spec.pages) - 1) as usize];
                    page * PAGE + (rng.random_range(0..PAGE) & !7)
                })
                .collect()
        }
    };

    Ok(offsets
        .into_iter()
        .map(|off| {
            let rw = if rng.random_bool(spec.write_fraction) {
                Rw::Write
            } else {
                Rw::Read
            };
            TraceRecord {
                core,
                rw,
                va: VirtualAddress::new(base + off).expect("validated footprint is canonical"),
            }
        })
        .collect())
}
