//! Functional page tables for one address space.
//!
//! Four structural modes share one implementation: the per-mode
//! difference is only which levels a virtual address indexes.
//!
//! | mode           | walk levels            | leaf page |
//! |----------------|------------------------|-----------|
//! | `Radix4`       | PL4, PL3, PL2, PL1     | 4KB       |
//! | `FlattenedL21` | PL4, PL3, PL21         | 4KB       |
//! | `Huge2M`       | PL4, PL3, PL2          | 2MB       |
//! | `Ideal`        | none                   | 4KB       |
//!
//! Physical memory is handed out by [`FrameAllocator`], which grows data
//! frames up from frame 0 and table nodes down from the top of memory. The
//! two pools never meet unless memory is exhausted, so data-frame numbers
//! depend only on the order of first touches and not on the table layout.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::addr::{PageSize, PhysicalAddress, VirtualAddress, FLAT_ENTRIES, LEVEL_ENTRIES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PageTableMode {
    Radix4,
    FlattenedL21,
    Huge2M,
    Ideal,
}

impl PageTableMode {
    pub const fn walk_length(self) -> usize {
        match self {
            PageTableMode::Radix4 => 4,
            PageTableMode::FlattenedL21 | PageTableMode::Huge2M => 3,
            PageTableMode::Ideal => 0,
        }
    }

    pub const fn page_size(self) -> PageSize {
        match self {
            PageTableMode::Huge2M => PageSize::Size2M,
            _ => PageSize::Size4K,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Level {
    #[serde(rename = "PL4")]
    Pl4,
    #[serde(rename = "PL3")]
    Pl3,
    #[serde(rename = "PL2")]
    Pl2,
    #[serde(rename = "PL1")]
    Pl1,
    #[serde(rename = "PL21")]
    Pl21,
}

impl Level {
    pub const ALL: [Level; 5] = [Level::Pl4, Level::Pl3, Level::Pl2, Level::Pl1, Level::Pl21];

    pub const fn entry_count(self) -> u64 {
        match self {
            Level::Pl21 => FLAT_ENTRIES,
            _ => LEVEL_ENTRIES,
        }
    }

    pub const fn node_size(self) -> PageSize {
        match self {
            Level::Pl21 => PageSize::Size2M,
            _ => PageSize::Size4K,
        }
    }

    pub const fn label(self) -> &'static str {
        match self {
            Level::Pl4 => "PL4",
            Level::Pl3 => "PL3",
            Level::Pl2 => "PL2",
            Level::Pl1 => "PL1",
            Level::Pl21 => "PL21",
        }
    }

    const fn slot(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PageTableError {
    #[error("{va} is not mapped (invalid entry at {})", .level.map_or("leaf map", Level::label))]
    PageNotMapped { va: VirtualAddress, level: Option<Level> },
    #[error("out of physical memory: {requested} frame(s) requested, {free} free")]
    OutOfPhysicalMemory { requested: u64, free: u64 },
    #[error("index {index} out of range for {level} node ({entries} entries)")]
    IndexOutOfRange { level: Level, index: u64, entries: u64 },
}

/// A 64-bit page-table entry in x86-64 layout: present bit 0, page-size
/// bit 7 for 2MB leaves, frame address in bits 12..51, and software bit 9
/// marking that the next level is a flattened PL2/PL1 node.
#[derive(Clone, Copy, PartialEq, Eq, Default)]
pub struct PageTableEntry(u64);

impl PageTableEntry {
    const PRESENT: u64 = 1;
    const HUGE: u64 = 1 << 7;
    const FLATTENED: u64 = 1 << 9;
    const FRAME_MASK: u64 = ((1 << 52) - 1) & !0xfff;

    /// `frame` is a 4KB frame number.
    pub const fn new(frame: u64) -> Self {
        Self(((frame << 12) & Self::FRAME_MASK) | Self::PRESENT)
    }

    pub const fn flattened(self) -> Self {
        Self(self.0 | Self::FLATTENED)
    }

    pub const fn huge(self) -> Self {
        Self(self.0 | Self::HUGE)
    }

    pub const fn is_valid(self) -> bool {
        self.0 & Self::PRESENT != 0
    }

    pub const fn is_flattened(self) -> bool {
        self.0 & Self::FLATTENED != 0
    }

    pub const fn is_huge(self) -> bool {
        self.0 & Self::HUGE != 0
    }

    /// 4KB frame number the entry points at.
    pub const fn frame(self) -> u64 {
        (self.0 & Self::FRAME_MASK) >> 12
    }

    pub const fn bits(self) -> u64 {
        self.0
    }
}

impl fmt::Debug for PageTableEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if !self.is_valid() {
            return f.write_str("PTE(invalid)");
        }
        write!(f, "PTE(frame={:#x}", self.frame())?;
        if self.is_flattened() {
            f.write_str(", flat")?;
        }
        if self.is_huge() {
            f.write_str(", 2M")?;
        }
        f.write_str(")")
    }
}

pub type NodeId = u32;

#[derive(Debug, Clone)]
pub struct TableNode {
    level: Level,
    base: PhysicalAddress,
    entries: Vec<PageTableEntry>,
    valid: u64,
}

impl TableNode {
    fn new(level: Level, base: PhysicalAddress) -> Self {
        Self {
            level,
            base,
            entries: vec![PageTableEntry::default(); level.entry_count() as usize],
            valid: 0,
        }
    }

    pub fn level(&self) -> Level {
        self.level
    }

    pub fn base(&self) -> PhysicalAddress {
        self.base
    }

    pub fn entry_count(&self) -> u64 {
        self.entries.len() as u64
    }

    pub fn size_bytes(&self) -> u64 {
        self.entry_count() * 8
    }

    pub fn valid_entries(&self) -> u64 {
        self.valid
    }

    pub fn entry(&self, index: u64) -> Option<PageTableEntry> {
        self.entries.get(index as usize).copied()
    }

    /// Physical address of the 8-byte entry at `index`.
    pub fn pte_address(&self, index: u64) -> Result<PhysicalAddress, PageTableError> {
        if index >= self.entry_count() {
            return Err(PageTableError::IndexOutOfRange {
                level: self.level,
                index,
                entries: self.entry_count(),
            });
        }
        Ok(PhysicalAddress::new(self.base.value() + index * 8))
    }

    fn set(&mut self, index: usize, pte: PageTableEntry) {
        if !self.entries[index].is_valid() {
            self.valid += 1;
        }
        self.entries[index] = pte;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct AllocationStats {
    pub data_frames: u64,
    pub table_frames: u64,
    /// Frames skipped to satisfy 2MB alignment.
    pub alignment_waste: u64,
}

/// Two-ended bump allocator over 4KB physical frames.
#[derive(Debug, Clone)]
pub struct FrameAllocator {
    total_frames: u64,
    /// Next free frame of the upward-growing data pool.
    data_cursor: u64,
    /// One past the lowest frame used by the downward-growing table pool.
    table_cursor: u64,
    stats: AllocationStats,
}

impl FrameAllocator {
    pub fn new(total_bytes: u64) -> Self {
        let total_frames = total_bytes >> 12;
        Self {
            total_frames,
            data_cursor: 0,
            table_cursor: total_frames,
            stats: AllocationStats::default(),
        }
    }

    pub fn total_frames(&self) -> u64 {
        self.total_frames
    }

    pub fn free_frames(&self) -> u64 {
        self.table_cursor - self.data_cursor
    }

    pub fn stats(&self) -> AllocationStats {
        self.stats
    }

    /// Returns the first 4KB frame of a fresh data page of `size`.
    pub fn alloc_data(&mut self, size: PageSize) -> Result<u64, PageTableError> {
        let n = size.frames();
        let start = self.data_cursor.next_multiple_of(n);
        if start + n > self.table_cursor {
            return Err(self.exhausted(n));
        }
        self.stats.alignment_waste += start - self.data_cursor;
        self.stats.data_frames += n;
        self.data_cursor = start + n;
        Ok(start)
    }

    /// Returns the first 4KB frame of a fresh table node of `size`.
    pub fn alloc_table(&mut self, size: PageSize) -> Result<u64, PageTableError> {
        let n = size.frames();
        let Some(end) = self.table_cursor.checked_sub(n) else {
            return Err(self.exhausted(n));
        };
        let start = end - end % n;
        if start < self.data_cursor {
            return Err(self.exhausted(n));
        }
        self.stats.alignment_waste += self.table_cursor - (start + n);
        self.stats.table_frames += n;
        self.table_cursor = start;
        Ok(start)
    }

    fn exhausted(&self, requested: u64) -> PageTableError {
        PageTableError::OutOfPhysicalMemory {
            requested,
            free: self.free_frames(),
        }
    }
}

/// One PTE fetch of a page walk.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WalkStep {
    pub level: Level,
    pub index: u64,
    pub pte_address: PhysicalAddress,
}

impl Default for WalkStep {
    fn default() -> Self {
        Self {
            level: Level::Pl4,
            index: 0,
            pte_address: PhysicalAddress::new(0),
        }
    }
}

/// Result of a functional walk: the PTE addresses visited top-down plus
/// the terminal data page.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WalkPath {
    steps: [WalkStep; 4],
    len: usize,
    frame_base: PhysicalAddress,
    page_size: PageSize,
}

impl WalkPath {
    pub fn steps(&self) -> &[WalkStep] {
        &self.steps[..self.len]
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn page_size(&self) -> PageSize {
        self.page_size
    }

    pub fn frame_base(&self) -> PhysicalAddress {
        self.frame_base
    }

    /// Frame number in units of the page size.
    pub fn frame_number(&self) -> u64 {
        self.frame_base.value() >> self.page_size.shift()
    }

    pub fn physical(&self, va: VirtualAddress) -> PhysicalAddress {
        PhysicalAddress::new(self.frame_base.value() | va.page_offset(self.page_size))
    }
}

/// Valid-entry accounting for one level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct LevelOccupancy {
    pub nodes: u64,
    pub valid_entries: u64,
    pub capacity: u64,
}

impl LevelOccupancy {
    /// 0 when no node exists at the level; check `nodes` to tell apart.
    pub fn ratio(&self) -> f64 {
        if self.capacity == 0 {
            0.0
        } else {
            self.valid_entries as f64 / self.capacity as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OccupancyRow {
    pub level: String,
    pub nodes: u64,
    pub valid_entries: u64,
    pub occupancy: f64,
}

type IndexPath = ([(Level, u64); 4], usize);

/// The page-table forest of one address space plus its frame allocator.
#[derive(Debug, Clone)]
pub struct PageTableSet {
    mode: PageTableMode,
    alloc: FrameAllocator,
    nodes: Vec<TableNode>,
    /// Every 4KB frame belonging to a table node.
    node_frames: HashMap<u64, NodeId>,
    /// Ideal mode has no tables; vpn -> 4KB frame.
    direct: HashMap<u64, u64>,
    per_level: [LevelOccupancy; 5],
}

impl PageTableSet {
    /// Creates an empty address space over `physical_bytes` of memory.
    /// The PL4 root is allocated immediately in every mode except `Ideal`.
    pub fn new(mode: PageTableMode, physical_bytes: u64) -> Result<Self, PageTableError> {
        let mut set = Self {
            mode,
            alloc: FrameAllocator::new(physical_bytes),
            nodes: Vec::new(),
            node_frames: HashMap::new(),
            direct: HashMap::new(),
            per_level: [LevelOccupancy::default(); 5],
        };
        if mode != PageTableMode::Ideal {
            set.new_node(Level::Pl4)?;
        }
        Ok(set)
    }

    pub fn mode(&self) -> PageTableMode {
        self.mode
    }

    pub fn allocator(&self) -> &FrameAllocator {
        &self.alloc
    }

    pub fn nodes(&self) -> &[TableNode] {
        &self.nodes
    }

    pub fn root(&self) -> Option<&TableNode> {
        self.nodes.first()
    }

    /// Bytes of physical memory held by table nodes.
    pub fn metadata_bytes(&self) -> u64 {
        self.alloc.stats().table_frames << 12
    }

    /// Number of distinct pages mapped so far.
    pub fn mapped_pages(&self) -> u64 {
        match self.mode {
            PageTableMode::Ideal => self.direct.len() as u64,
            PageTableMode::Radix4 => self.per_level[Level::Pl1.slot()].valid_entries,
            PageTableMode::FlattenedL21 => self.per_level[Level::Pl21.slot()].valid_entries,
            PageTableMode::Huge2M => self.per_level[Level::Pl2.slot()].valid_entries,
        }
    }

    fn new_node(&mut self, level: Level) -> Result<NodeId, PageTableError> {
        let size = level.node_size();
        let first = self.alloc.alloc_table(size)?;
        let id = self.nodes.len() as NodeId;
        self.nodes.push(TableNode::new(
            level,
            PhysicalAddress::from_frame(first, PageSize::Size4K, 0),
        ));
        for f in first..first + size.frames() {
            self.node_frames.insert(f, id);
        }
        let occ = &mut self.per_level[level.slot()];
        occ.nodes += 1;
        occ.capacity += level.entry_count();
        Ok(id)
    }

    fn indices(&self, va: VirtualAddress) -> IndexPath {
        let mut out = [(Level::Pl4, 0u64); 4];
        let len = match self.mode {
            PageTableMode::Radix4 => {
                let r = va.split_radix();
                out = [
                    (Level::Pl4, r.i4.into()),
                    (Level::Pl3, r.i3.into()),
                    (Level::Pl2, r.i2.into()),
                    (Level::Pl1, r.i1.into()),
                ];
                4
            }
            PageTableMode::FlattenedL21 => {
                let f = va.split_flattened();
                out[..3].copy_from_slice(&[
                    (Level::Pl4, f.i4.into()),
                    (Level::Pl3, f.i3.into()),
                    (Level::Pl21, f.i21.into()),
                ]);
                3
            }
            PageTableMode::Huge2M => {
                let h = va.split_huge();
                out[..3].copy_from_slice(&[
                    (Level::Pl4, h.i4.into()),
                    (Level::Pl3, h.i3.into()),
                    (Level::Pl2, h.i2.into()),
                ]);
                3
            }
            PageTableMode::Ideal => 0,
        };
        (out, len)
    }

    fn child_of(&self, pte: PageTableEntry) -> NodeId {
        self.node_frames[&pte.frame()]
    }

    /// Ensures `va` is backed by a data page, creating missing table nodes
    /// on the way. Mapping an already-mapped page allocates nothing.
    pub fn map(&mut self, va: VirtualAddress) -> Result<PhysicalAddress, PageTableError> {
        let size = self.mode.page_size();
        if self.mode == PageTableMode::Ideal {
            let vpn = va.page_number(size);
            let frame = match self.direct.get(&vpn) {
                Some(&f) => f,
                None => {
                    let f = self.alloc.alloc_data(size)?;
                    self.direct.insert(vpn, f);
                    f
                }
            };
            return Ok(PhysicalAddress::new((frame << 12) | va.page_offset(size)));
        }

        let (path, len) = self.indices(va);
        let mut node: NodeId = 0;
        for k in 0..len - 1 {
            let (_, index) = path[k];
            let pte = self.nodes[node as usize].entries[index as usize];
            node = if pte.is_valid() {
                self.child_of(pte)
            } else {
                let child_level = path[k + 1].0;
                let child = self.new_node(child_level)?;
                let frame = self.nodes[child as usize].base.frame_4k();
                let mut entry = PageTableEntry::new(frame);
                if child_level == Level::Pl21 {
                    entry = entry.flattened();
                }
                self.set_entry(node, index, entry);
                child
            };
        }

        let (_, index) = path[len - 1];
        let pte = self.nodes[node as usize].entries[index as usize];
        let frame = if pte.is_valid() {
            pte.frame()
        } else {
            let frame = self.alloc.alloc_data(size)?;
            let mut entry = PageTableEntry::new(frame);
            if size == PageSize::Size2M {
                entry = entry.huge();
            }
            self.set_entry(node, index, entry);
            frame
        };
        Ok(PhysicalAddress::new((frame << 12) | va.page_offset(size)))
    }

    fn set_entry(&mut self, node: NodeId, index: u64, pte: PageTableEntry) {
        let n = &mut self.nodes[node as usize];
        let before = n.valid;
        n.set(index as usize, pte);
        self.per_level[n.level.slot()].valid_entries += n.valid - before;
    }

    /// Functional walk. Visits the same entries a hardware walker would.
    pub fn resolve(&self, va: VirtualAddress) -> Result<WalkPath, PageTableError> {
        let size = self.mode.page_size();
        let mut out = WalkPath {
            steps: [WalkStep::default(); 4],
            len: 0,
            frame_base: PhysicalAddress::new(0),
            page_size: size,
        };
        if self.mode == PageTableMode::Ideal {
            let frame = self
                .direct
                .get(&va.page_number(size))
                .ok_or(PageTableError::PageNotMapped { va, level: None })?;
            out.frame_base = PhysicalAddress::new(frame << 12);
            return Ok(out);
        }

        let (path, len) = self.indices(va);
        let mut node = &self.nodes[0];
        for (k, &(level, index)) in path[..len].iter().enumerate() {
            debug_assert_eq!(node.level, level);
            let pte = node.entries[index as usize];
            out.steps[k] = WalkStep {
                level,
                index,
                pte_address: PhysicalAddress::new(node.base.value() + index * 8),
            };
            if !pte.is_valid() {
                return Err(PageTableError::PageNotMapped { va, level: Some(level) });
            }
            if k + 1 == len {
                out.frame_base = PhysicalAddress::new(pte.frame() << 12);
            } else {
                node = &self.nodes[self.child_of(pte) as usize];
            }
        }
        out.len = len;
        Ok(out)
    }

    /// Whether `pa` lies inside any table node.
    pub fn is_metadata(&self, pa: PhysicalAddress) -> bool {
        self.node_frames.contains_key(&pa.frame_4k())
    }

    pub fn occupancy(&self, level: Level) -> LevelOccupancy {
        self.per_level[level.slot()]
    }

    /// PL1 entries measured against the span of the PL2 nodes above them,
    /// i.e. what a flattened table would have held. Radix mode only.
    pub fn combined_l21_occupancy(&self) -> LevelOccupancy {
        let pl2 = self.per_level[Level::Pl2.slot()];
        LevelOccupancy {
            nodes: pl2.nodes,
            valid_entries: self.per_level[Level::Pl1.slot()].valid_entries,
            capacity: pl2.nodes * FLAT_ENTRIES,
        }
    }

    /// Per-level rows for the levels present in this mode.
    pub fn occupancy_report(&self) -> Vec<OccupancyRow> {
        let row = |label: &str, o: LevelOccupancy| OccupancyRow {
            level: label.to_string(),
            nodes: o.nodes,
            valid_entries: o.valid_entries,
            occupancy: o.ratio(),
        };
        let levels: &[Level] = match self.mode {
            PageTableMode::Radix4 => &[Level::Pl4, Level::Pl3, Level::Pl2, Level::Pl1],
            PageTableMode::FlattenedL21 => &[Level::Pl4, Level::Pl3, Level::Pl21],
            PageTableMode::Huge2M => &[Level::Pl4, Level::Pl3, Level::Pl2],
            PageTableMode::Ideal => &[],
        };
        let mut rows: Vec<_> = levels.iter().map(|&l| row(l.label(), self.occupancy(l))).collect();
        if self.mode == PageTableMode::Radix4 {
            rows.push(row("PL2/PL1", self.combined_l21_occupancy()));
        }
        rows
    }
}

/// Renders occupancy rows as `level,nodes,valid_entries,occupancy` CSV.
pub fn occupancy_csv(rows: &[OccupancyRow]) -> String {
    let mut out = String::from("level,nodes,valid_entries,occupancy\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{:.6}\n",
            r.level, r.nodes, r.valid_entries, r.occupancy
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::addr::RadixIndices;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const GB: u64 = 1 << 30;
    const SAMPLE: u64 = 0x0000_0080_8060_4005;

    fn va(v: u64) -> VirtualAddress {
        VirtualAddress::new(v).unwrap()
    }

    fn used(pt: &PageTableSet) -> u64 {
        let s = pt.allocator().stats();
        s.data_frames + s.table_frames
    }

    #[test]
    fn radix_map_allocates_three_nodes_and_one_frame() {
        let mut pt = PageTableSet::new(PageTableMode::Radix4, 16 * GB).unwrap();
        let before = pt.allocator().stats();
        assert_eq!(before.table_frames, 1);
        pt.map(va(0)).unwrap();
        let after = pt.allocator().stats();
        assert_eq!(after.table_frames - before.table_frames, 3);
        assert_eq!(after.data_frames, 1);
    }

    #[test]
    fn flattened_map_allocates_pl3_pl21_and_one_frame() {
        let mut pt = PageTableSet::new(PageTableMode::FlattenedL21, 16 * GB).unwrap();
        pt.map(va(0)).unwrap();
        let s = pt.allocator().stats();
        assert_eq!(s.table_frames, 1 + 1 + 512);
        assert_eq!(s.data_frames, 1);
        assert_eq!(pt.occupancy(Level::Pl21).nodes, 1);
    }

    #[test]
    fn map_is_idempotent() {
        for mode in [
            PageTableMode::Radix4,
            PageTableMode::FlattenedL21,
            PageTableMode::Huge2M,
            PageTableMode::Ideal,
        ] {
            let mut pt = PageTableSet::new(mode, 16 * GB).unwrap();
            let a = pt.map(va(SAMPLE)).unwrap();
            let n = used(&pt);
            let b = pt.map(va(SAMPLE)).unwrap();
            assert_eq!(a, b, "{mode:?}");
            assert_eq!(used(&pt), n, "{mode:?}");
        }
    }

    #[test]
    fn resolve_paths_follow_indices() {
        let mut pt = PageTableSet::new(PageTableMode::Radix4, 16 * GB).unwrap();
        let pa = pt.map(va(SAMPLE)).unwrap();
        let path = pt.resolve(va(SAMPLE)).unwrap();
        let idx: Vec<_> = path.steps().iter().map(|s| s.index).collect();
        assert_eq!(idx, [1, 2, 3, 4]);
        assert_eq!(path.physical(va(SAMPLE)), pa);
        assert_eq!(pa.value() & 0xfff, 5);

        let mut pt = PageTableSet::new(PageTableMode::FlattenedL21, 16 * GB).unwrap();
        pt.map(va(SAMPLE)).unwrap();
        let path = pt.resolve(va(SAMPLE)).unwrap();
        let idx: Vec<_> = path.steps().iter().map(|s| s.index).collect();
        assert_eq!(idx, [1, 2, 0x604]);
        let levels: Vec<_> = path.steps().iter().map(|s| s.level).collect();
        assert_eq!(levels, [Level::Pl4, Level::Pl3, Level::Pl21]);
    }

    #[test]
    fn walk_lengths_per_mode() {
        for (mode, len) in [
            (PageTableMode::Radix4, 4),
            (PageTableMode::FlattenedL21, 3),
            (PageTableMode::Huge2M, 3),
            (PageTableMode::Ideal, 0),
        ] {
            let mut pt = PageTableSet::new(mode, 16 * GB).unwrap();
            pt.map(va(SAMPLE)).unwrap();
            assert_eq!(pt.resolve(va(SAMPLE)).unwrap().len(), len, "{mode:?}");
            assert_eq!(mode.walk_length(), len);
        }
    }

    #[test]
    fn huge_pages_share_a_frame_within_2mb() {
        let mut pt = PageTableSet::new(PageTableMode::Huge2M, 16 * GB).unwrap();
        let a = pt.map(va(SAMPLE)).unwrap();
        let b = pt.map(va(SAMPLE + 0x1000)).unwrap();
        assert_eq!(b.value() - a.value(), 0x1000);
        assert_eq!(pt.allocator().stats().data_frames, 512);
        let path = pt.resolve(va(SAMPLE)).unwrap();
        assert_eq!(path.page_size(), PageSize::Size2M);
        assert_eq!(path.frame_base().value() % (2 << 20), 0);
        assert_eq!(a.value() & 0x1f_ffff, 0x4005);
    }

    #[test]
    fn unmapped_reports_level() {
        let mut pt = PageTableSet::new(PageTableMode::Radix4, 16 * GB).unwrap();
        assert_eq!(
            pt.resolve(va(SAMPLE)),
            Err(PageTableError::PageNotMapped {
                va: va(SAMPLE),
                level: Some(Level::Pl4)
            })
        );
        pt.map(va(SAMPLE)).unwrap();
        // Same PL1 node, different entry.
        let neighbour = va(SAMPLE + 0x1000);
        assert_eq!(
            pt.resolve(neighbour),
            Err(PageTableError::PageNotMapped {
                va: neighbour,
                level: Some(Level::Pl1)
            })
        );
        let pt = PageTableSet::new(PageTableMode::Ideal, 16 * GB).unwrap();
        assert!(matches!(
            pt.resolve(va(0)),
            Err(PageTableError::PageNotMapped { level: None, .. })
        ));
    }

    #[test]
    fn pte_address_arithmetic() {
        let node = TableNode::new(Level::Pl1, PhysicalAddress::new(0x1000));
        assert_eq!(node.pte_address(0).unwrap().value(), 0x1000);
        assert_eq!(node.pte_address(4).unwrap().value(), 0x1020);
        assert!(matches!(
            node.pte_address(512),
            Err(PageTableError::IndexOutOfRange { .. })
        ));
        let flat = TableNode::new(Level::Pl21, PhysicalAddress::new(0x4000_0000));
        assert_eq!(flat.pte_address(262_143).unwrap().value(), 0x4000_0000 + 0x1f_fff8);
        assert_eq!(flat.size_bytes(), 2 << 20);
        assert!(flat.pte_address(262_144).is_err());
    }

    #[test]
    fn occupancy_one_full_pl1_node() {
        let mut pt = PageTableSet::new(PageTableMode::Radix4, 16 * GB).unwrap();
        pt.map(va(0)).unwrap();
        assert_eq!(pt.occupancy(Level::Pl1).ratio(), 1.0 / 512.0);
        for p in 1..512u64 {
            pt.map(va(p << 12)).unwrap();
        }
        assert_eq!(pt.occupancy(Level::Pl1).ratio(), 1.0);
        assert_eq!(pt.occupancy(Level::Pl1).nodes, 1);
        assert_eq!(pt.combined_l21_occupancy().ratio(), 512.0 / 262_144.0);
        assert_eq!(pt.occupancy(Level::Pl21), LevelOccupancy::default());
    }

    #[test]
    fn occupancy_dense_random_region() {
        // 8GB region, random 4KB pages until 95% are touched.
        let mut pt = PageTableSet::new(PageTableMode::Radix4, 16 * GB).unwrap();
        let pages = (8 * GB) >> 12;
        let base = 0x0000_1000_0000_0000u64;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let target = pages * 95 / 100;
        while pt.mapped_pages() < target {
            let p = rng.random_range(0..pages);
            pt.map(va(base + (p << 12))).unwrap();
        }
        assert!(pt.occupancy(Level::Pl1).ratio() > 0.9);
        assert!(pt.occupancy(Level::Pl4).ratio() < 0.01);
    }

    #[test]
    fn metadata_region_classification() {
        let mut pt = PageTableSet::new(PageTableMode::FlattenedL21, 16 * GB).unwrap();
        let data = pt.map(va(SAMPLE)).unwrap();
        assert!(!pt.is_metadata(data));
        for node in pt.nodes() {
            assert!(pt.is_metadata(node.pte_address(0).unwrap()));
            assert!(pt.is_metadata(node.pte_address(node.entry_count() - 1).unwrap()));
        }
        for s in pt.resolve(va(SAMPLE)).unwrap().steps() {
            assert!(pt.is_metadata(s.pte_address));
        }
    }

    #[test]
    fn flattened_bit_only_on_pl3_entries() {
        let mut pt = PageTableSet::new(PageTableMode::FlattenedL21, 16 * GB).unwrap();
        pt.map(va(SAMPLE)).unwrap();
        for node in pt.nodes() {
            for i in 0..node.entry_count() {
                let e = node.entry(i).unwrap();
                if e.is_flattened() {
                    assert_eq!(node.level(), Level::Pl3);
                }
            }
        }
        let pl3 = pt.nodes().iter().find(|n| n.level() == Level::Pl3).unwrap();
        assert!(pl3.entry(2).unwrap().is_flattened());
    }

    #[test]
    fn out_of_memory_is_reported() {
        // 8 frames: root + 3 nodes + 1 data fits, the next PL1 subtree does not.
        let mut pt = PageTableSet::new(PageTableMode::Radix4, 8 << 12).unwrap();
        pt.map(va(0)).unwrap();
        let far = RadixIndices {
            i4: 3,
            i3: 0,
            i2: 0,
            i1: 0,
            offset: 0,
        }
        .compose()
        .unwrap();
        assert!(matches!(pt.map(far), Err(PageTableError::OutOfPhysicalMemory { .. })));
        let mut pt = PageTableSet::new(PageTableMode::FlattenedL21, 1 << 20).unwrap();
        assert!(matches!(
            pt.map(va(0)),
            Err(PageTableError::OutOfPhysicalMemory { requested: 512, .. })
        ));
    }

    #[test]
    fn allocator_pools_are_disjoint_and_aligned() {
        let mut a = FrameAllocator::new(64 << 20);
        let t0 = a.alloc_table(PageSize::Size4K).unwrap();
        let d0 = a.alloc_data(PageSize::Size4K).unwrap();
        let t1 = a.alloc_table(PageSize::Size2M).unwrap();
        let d1 = a.alloc_data(PageSize::Size2M).unwrap();
        assert_eq!(t0, (64 << 8) - 1);
        assert_eq!(d0, 0);
        assert_eq!(t1 % 512, 0);
        assert!(t1 + 512 <= t0);
        assert_eq!(d1, 512);
        assert_eq!(a.stats().alignment_waste, 511 + 511);
    }

    #[test]
    fn pte_bit_layout() {
        let e = PageTableEntry::new(0xabcde).flattened();
        assert!(e.is_valid() && e.is_flattened() && !e.is_huge());
        assert_eq!(e.frame(), 0xabcde);
        assert_eq!(e.bits(), 0xabcde000 | 1 | 1 << 9);
        assert!(!PageTableEntry::default().is_valid());
    }

    #[test]
    fn occupancy_csv_layout() {
        let mut pt = PageTableSet::new(PageTableMode::FlattenedL21, 16 * GB).unwrap();
        pt.map(va(0)).unwrap();
        let csv = occupancy_csv(&pt.occupancy_report());
        assert_eq!(
            csv,
            "level,nodes,valid_entries,occupancy\n\
             PL4,1,1,0.001953\n\
             PL3,1,1,0.001953\n\
             PL21,1,1,0.000004\n"
        );
    }
}
