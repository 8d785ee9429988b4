//! Trace-driven simulator of address translation and memory timing for
//! near-data-processing (NDP) cores.
//!
//! An NDP core sits in the logic layer of stacked memory with a single
//! small L1 cache. With a conventional 4-level radix page table, page
//! walks on such a core are long and their PTE fetches thrash the L1. The
//! simulator models that baseline next to two remedies (a page table whose
//! last two levels are merged into one 2MB node, and routing PTE fetches
//! around the L1) plus 2MB pages and an ideal zero-cost translation bound.
//!
//! Module map:
//!
//! - [`addr`]: canonical virtual addresses and index extraction
//! - [`pagetable`]: functional page tables, frame allocation, occupancy
//! - [`mmu`]: TLBs, page-walk caches and the walker
//! - [`memhier`]: caches, PTE bypass and the shared memory controller
//! - [`trace`]: trace format and synthetic workload generators
//! - [`engine`]: warm-up, the multi-core run loop and statistics
//! - [`config`] and [`report`]: JSON configuration and reports

pub mod addr;
pub mod config;
pub mod engine;
pub mod lru;
pub mod memhier;
pub mod mmu;
pub mod pagetable;
pub mod report;
pub mod trace;

use thiserror::Error;

pub use addr::{PageSize, PhysicalAddress, VirtualAddress};
pub use config::{load_config, Mechanism, SimConfig, SystemMode};
pub use engine::{compare, run, warmup, SimStats, Simulator};
pub use pagetable::{PageTableMode, PageTableSet};
pub use trace::{generate, parse_trace, write_trace, GeneratorSpec, TraceRecord};

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Addr(#[from] addr::AddrError),
    #[error(transparent)]
    PageTable(#[from] pagetable::PageTableError),
    #[error(transparent)]
    Memory(#[from] memhier::MemError),
    #[error(transparent)]
    Config(#[from] config::ConfigError),
    #[error(transparent)]
    Trace(#[from] trace::TraceError),
    #[error("trace record {index} targets core {core} but only {cores} core(s) are configured")]
    CoreOutOfRange { index: usize, core: usize, cores: usize },
    #[error("configurations differ in {0}; comparisons need identical cores and traces")]
    ConfigMismatch(&'static str),
}
