//! Per-core translation hardware: L1 DTLB, L2 TLB, per-level page-walk
//! caches and the page walker.
//!
//! The walker does not own a clock. [`TranslationUnit::walk`] updates all
//! core-private state (TLBs, PWCs, the core's caches) and returns the list
//! of metadata accesses with their private latencies; the shared memory
//! controller is consulted later, either immediately through
//! [`TranslationUnit::walk_timed`] or by the engine in global arrival order.

use serde::Serialize;

use crate::addr::{PageSize, PhysicalAddress, VirtualAddress};
use crate::config::{PwcConfig, SimConfig, TlbConfig};
use crate::lru::SetAssoc;
use crate::memhier::{CacheHierarchy, HitMiss, MemoryRequest, MemorySystem};
use crate::pagetable::{Level, PageTableMode, PageTableSet, WalkPath};
use crate::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TlbEntry {
    pub vpn: u64,
    /// Frame number in units of `page_size`.
    pub frame: u64,
    pub page_size: PageSize,
}

/// One set-associative TLB level. 4KB and 2MB entries share the arrays;
/// an entry is keyed by its vpn at its own granularity.
#[derive(Debug, Clone)]
pub struct Tlb {
    latency: u64,
    entries: SetAssoc<(u64, PageSize), u64>,
}

impl Tlb {
    pub fn new(config: &TlbConfig) -> Self {
        Self {
            latency: config.latency,
            entries: SetAssoc::new(config.sets(), config.ways),
        }
    }

    pub fn latency(&self) -> u64 {
        self.latency
    }

    fn set_of(&self, vpn: u64) -> usize {
        (vpn % self.entries.sets() as u64) as usize
    }

    pub fn lookup(&mut self, vpn: u64, size: PageSize) -> Option<u64> {
        let set = self.set_of(vpn);
        self.entries.lookup(set, (vpn, size)).copied()
    }

    pub fn contains(&self, vpn: u64, size: PageSize) -> bool {
        self.entries.peek(self.set_of(vpn), (vpn, size)).is_some()
    }

    pub fn insert(&mut self, entry: TlbEntry) -> Option<TlbEntry> {
        let set = self.set_of(entry.vpn);
        self.entries
            .insert(set, (entry.vpn, entry.page_size), entry.frame)
            .map(|((vpn, page_size), frame)| TlbEntry { vpn, frame, page_size })
    }

    pub fn remove(&mut self, vpn: u64, size: PageSize) -> Option<TlbEntry> {
        let set = self.set_of(vpn);
        self.entries.remove(set, (vpn, size)).map(|frame| TlbEntry {
            vpn,
            frame,
            page_size: size,
        })
    }

    /// vpns of the set `vpn` maps to, most recent first.
    pub fn set_contents(&self, vpn: u64) -> Vec<u64> {
        self.entries
            .recency_order(self.set_of(vpn))
            .into_iter()
            .map(|(v, _)| v)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TlbLevel {
    L1,
    L2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TlbLookup {
    /// Frame number in units of the mode's page size.
    pub frame: Option<u64>,
    pub level: Option<TlbLevel>,
    pub cycles: u64,
}

impl TlbLookup {
    pub fn hit(&self) -> bool {
        self.frame.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PwcStats {
    pub level: Level,
    pub hits: u64,
    pub misses: u64,
}

/// Index bits of `va` above (and including) `level`'s index.
fn walk_prefix(va: VirtualAddress, level: Level) -> u64 {
    let low48 = va.value() & ((1 << 48) - 1);
    match level {
        Level::Pl4 => low48 >> 39,
        Level::Pl3 => low48 >> 30,
        Level::Pl2 => low48 >> 21,
        Level::Pl1 | Level::Pl21 => low48 >> 12,
    }
}

/// One small cache per non-leaf walk level. An entry at level L holds the
/// base of the next-level node for a given index prefix, so a hit at L
/// makes every fetch at L and above unnecessary.
#[derive(Debug, Clone)]
pub struct PageWalkCaches {
    latency: u64,
    levels: Vec<(Level, SetAssoc<u64, PhysicalAddress>)>,
    stats: Vec<PwcStats>,
}

impl PageWalkCaches {
    pub fn new(config: &PwcConfig, mode: PageTableMode) -> Self {
        let levels: &[Level] = match mode {
            PageTableMode::Radix4 => &[Level::Pl4, Level::Pl3, Level::Pl2],
            PageTableMode::FlattenedL21 | PageTableMode::Huge2M => &[Level::Pl4, Level::Pl3],
            PageTableMode::Ideal => &[],
        };
        Self {
            latency: config.latency,
            levels: levels
                .iter()
                .map(|&l| (l, SetAssoc::new(config.sets(), config.ways)))
                .collect(),
            stats: levels
                .iter()
                .map(|&level| PwcStats {
                    level,
                    hits: 0,
                    misses: 0,
                })
                .collect(),
        }
    }

    pub fn latency(&self) -> u64 {
        self.latency
    }

    pub fn levels(&self) -> Vec<Level> {
        self.levels.iter().map(|(l, _)| *l).collect()
    }

    fn slot(&self, level: Level) -> usize {
        self.levels
            .iter()
            .position(|(l, _)| *l == level)
            .unwrap_or_else(|| panic!("no PWC at {level}"))
    }

    pub fn probe(&mut self, level: Level, va: VirtualAddress) -> Option<PhysicalAddress> {
        let i = self.slot(level);
        let key = walk_prefix(va, level);
        let cache = &mut self.levels[i].1;
        let set = (key % cache.sets() as u64) as usize;
        let hit = cache.lookup(set, key).copied();
        let s = &mut self.stats[i];
        if hit.is_some() {
            s.hits += 1;
        } else {
            s.misses += 1;
        }
        hit
    }

    pub fn fill(&mut self, level: Level, va: VirtualAddress, next_node: PhysicalAddress) {
        let i = self.slot(level);
        let key = walk_prefix(va, level);
        let cache = &mut self.levels[i].1;
        let set = (key % cache.sets() as u64) as usize;
        cache.insert(set, key, next_node);
    }

    /// Prefix keys of the set `va` maps to at `level`, most recent first.
    pub fn set_contents(&self, level: Level, va: VirtualAddress) -> Vec<u64> {
        let cache = &self.levels[self.slot(level)].1;
        let key = walk_prefix(va, level);
        cache.recency_order((key % cache.sets() as u64) as usize)
    }

    pub fn stats(&self) -> &[PwcStats] {
        &self.stats
    }
}

/// One access of a translation or data phase as seen by a core.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Step {
    /// Private cycles spent before the request is issued.
    pub delay: u64,
    pub request: MemoryRequest,
    /// Private cache latency of the request.
    pub probe_cycles: u64,
    /// The request missed every cache (or bypassed them).
    pub to_memory: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WalkPlan {
    pub path: WalkPath,
    /// (level, hit) for every PWC probed, top-down.
    pub pwc_hits: Vec<(Level, bool)>,
    /// Sequential metadata fetches, one per level not covered by a PWC hit.
    pub steps: Vec<Step>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Translation {
    pub pa: PhysicalAddress,
    pub tlb: TlbLookup,
    pub walk: Option<WalkPlan>,
}

/// A walk replayed against the memory controller.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WalkOutcome {
    /// Frame number in units of the page size.
    pub frame: u64,
    pub page_size: PageSize,
    pub cycles: u64,
    pub requests: Vec<MemoryRequest>,
    pub pwc_hits: Vec<(Level, bool)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimedTranslation {
    pub pa: PhysicalAddress,
    pub cycles: u64,
    pub requests: Vec<MemoryRequest>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct MmuStats {
    pub l1_tlb: HitMiss,
    pub l2_tlb: HitMiss,
    pub walks: u64,
    pub pwc: Vec<PwcStats>,
}

/// Translation machinery private to one core.
#[derive(Debug, Clone)]
pub struct TranslationUnit {
    core: usize,
    mode: PageTableMode,
    l1: Tlb,
    l2: Tlb,
    pwc: PageWalkCaches,
    l1_stats: HitMiss,
    l2_stats: HitMiss,
    walks: u64,
}

impl TranslationUnit {
    pub fn new(core: usize, config: &SimConfig) -> Self {
        let mode = config.page_table_mode();
        Self {
            core,
            mode,
            l1: Tlb::new(&config.dtlb),
            l2: Tlb::new(&config.l2tlb),
            pwc: PageWalkCaches::new(&config.pwc, mode),
            l1_stats: HitMiss::default(),
            l2_stats: HitMiss::default(),
            walks: 0,
        }
    }

    pub fn core(&self) -> usize {
        self.core
    }

    pub fn l1_tlb(&self) -> &Tlb {
        &self.l1
    }

    pub fn l2_tlb(&self) -> &Tlb {
        &self.l2
    }

    pub fn pwc(&self) -> &PageWalkCaches {
        &self.pwc
    }

    pub fn page_size(&self) -> PageSize {
        self.mode.page_size()
    }

    /// L1 then L2 TLB. An L2 hit moves the entry into L1.
    pub fn tlb_lookup(&mut self, va: VirtualAddress) -> TlbLookup {
        let size = self.page_size();
        let vpn = va.page_number(size);
        let mut cycles = self.l1.latency;
        if let Some(frame) = self.l1.lookup(vpn, size) {
            self.l1_stats.hits += 1;
            return TlbLookup {
                frame: Some(frame),
                level: Some(TlbLevel::L1),
                cycles,
            };
        }
        self.l1_stats.misses += 1;
        cycles += self.l2.latency;
        match self.l2.remove(vpn, size) {
            Some(entry) => {
                self.l2_stats.hits += 1;
                self.tlb_insert(entry);
                TlbLookup {
                    frame: Some(entry.frame),
                    level: Some(TlbLevel::L2),
                    cycles,
                }
            }
            None => {
                self.l2_stats.misses += 1;
                TlbLookup {
                    frame: None,
                    level: None,
                    cycles,
                }
            }
        }
    }

    /// Fills L1; the L1 victim, if any, is demoted to L2 and returned.
    pub fn tlb_insert(&mut self, entry: TlbEntry) -> Option<TlbEntry> {
        let victim = self.l1.insert(entry)?;
        self.l2.insert(victim);
        Some(victim)
    }

    /// Plans the page walk for `va`: probes PWCs top-down, then fetches
    /// every level below the deepest PWC hit through the core's caches.
    /// The leaf level has no PWC and is always fetched.
    pub fn walk(
        &mut self,
        va: VirtualAddress,
        pt: &PageTableSet,
        caches: &mut CacheHierarchy,
    ) -> Result<WalkPlan, Error> {
        let path = pt.resolve(va)?;
        let levels = path.steps();
        let leaf = levels.len() - 1;
        self.walks += 1;

        let mut lead = 0;
        let mut start = 0;
        let mut pwc_hits = Vec::with_capacity(leaf);
        for (k, step) in levels[..leaf].iter().enumerate() {
            lead += self.pwc.latency;
            let hit = self.pwc.probe(step.level, va);
            if let Some(next) = hit {
                debug_assert_eq!(next, node_base(&levels[k + 1]), "stale PWC entry");
                start = k + 1;
            }
            pwc_hits.push((step.level, hit.is_some()));
        }

        let mut steps = Vec::with_capacity(levels.len() - start);
        for k in start..levels.len() {
            let request = MemoryRequest::metadata(self.core, levels[k].pte_address);
            debug_assert!(pt.is_metadata(request.address));
            let probe = caches.probe(&request);
            steps.push(Step {
                delay: if k == start { lead } else { 0 },
                request,
                probe_cycles: probe.cycles,
                to_memory: probe.to_memory,
            });
            if k < leaf {
                self.pwc.fill(levels[k].level, va, node_base(&levels[k + 1]));
            }
        }
        Ok(WalkPlan { path, pwc_hits, steps })
    }

    /// TLB lookup, page walk on a miss, TLB fill.
    pub fn translate(
        &mut self,
        va: VirtualAddress,
        pt: &PageTableSet,
        caches: &mut CacheHierarchy,
    ) -> Result<Translation, Error> {
        let size = self.page_size();
        if self.mode == PageTableMode::Ideal {
            let path = pt.resolve(va)?;
            self.l1_stats.hits += 1;
            return Ok(Translation {
                pa: path.physical(va),
                tlb: TlbLookup {
                    frame: Some(path.frame_number()),
                    level: Some(TlbLevel::L1),
                    cycles: 0,
                },
                walk: None,
            });
        }
        let tlb = self.tlb_lookup(va);
        if let Some(frame) = tlb.frame {
            return Ok(Translation {
                pa: PhysicalAddress::from_frame(frame, size, va.page_offset(size)),
                tlb,
                walk: None,
            });
        }
        let plan = self.walk(va, pt, caches)?;
        self.tlb_insert(TlbEntry {
            vpn: va.page_number(size),
            frame: plan.path.frame_number(),
            page_size: size,
        });
        Ok(Translation {
            pa: plan.path.physical(va),
            tlb,
            walk: Some(plan),
        })
    }

    /// Walks and immediately replays the fetches against `mem`'s
    /// controller starting at cycle `now`.
    pub fn walk_timed(
        &mut self,
        va: VirtualAddress,
        pt: &PageTableSet,
        mem: &mut MemorySystem,
        now: u64,
    ) -> Result<WalkOutcome, Error> {
        let plan = self.walk(va, pt, mem.caches_mut(self.core))?;
        let (cycles, requests) = replay(&plan.steps, mem, now)?;
        Ok(WalkOutcome {
            frame: plan.path.frame_number(),
            page_size: plan.path.page_size(),
            cycles,
            requests,
            pwc_hits: plan.pwc_hits,
        })
    }

    pub fn translate_timed(
        &mut self,
        va: VirtualAddress,
        pt: &PageTableSet,
        mem: &mut MemorySystem,
        now: u64,
    ) -> Result<TimedTranslation, Error> {
        let t = self.translate(va, pt, mem.caches_mut(self.core))?;
        let mut cycles = t.tlb.cycles;
        let mut requests = Vec::new();
        if let Some(plan) = &t.walk {
            let (walk_cycles, reqs) = replay(&plan.steps, mem, now + cycles)?;
            cycles += walk_cycles;
            requests = reqs;
        }
        Ok(TimedTranslation {
            pa: t.pa,
            cycles,
            requests,
        })
    }

    pub fn stats(&self) -> MmuStats {
        MmuStats {
            l1_tlb: self.l1_stats,
            l2_tlb: self.l2_stats,
            walks: self.walks,
            pwc: self.pwc.stats().to_vec(),
        }
    }
}

fn node_base(step: &crate::pagetable::WalkStep) -> PhysicalAddress {
    PhysicalAddress::new(step.pte_address.value() - step.index * 8)
}

/// Runs planned steps back to back from `start`; returns elapsed cycles
/// and the requests stamped with their issue cycles.
pub fn replay(steps: &[Step], mem: &mut MemorySystem, start: u64) -> Result<(u64, Vec<MemoryRequest>), Error> {
    let mut t = start;
    let mut issued = Vec::with_capacity(steps.len());
    for step in steps {
        mem.check_range(step.request.address)?;
        t += step.delay;
        let mut req = step.request;
        req.issue_cycle = t;
        t += step.probe_cycles;
        if step.to_memory {
            t += mem.controller_mut().memory_access(req.kind, t);
        }
        issued.push(req);
    }
    Ok((t - start, issued))
}
