//! The simulation loop.
//!
//! Every record runs on its core as: TLB lookup, page walk on a miss (PTE
//! fetches through the L1 or around it when bypass is on), then the data
//! access through the core's caches and, on a miss, main memory. Cores are
//! blocking and in order, so each record's cycles split exactly into
//! translation and data-access time.
//!
//! Core-private structures (TLBs, PWCs, caches) are updated as soon as a
//! record starts, since no other core can observe them. The only shared
//! resource is the memory controller; requests reach it in global order of
//! (arrival cycle, core id), which keeps the controller FIFO and the whole
//! run deterministic.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashSet};

use serde::Serialize;

use crate::config::{Mechanism, SimConfig};
use crate::memhier::{AccessKind, CacheStats, HitMiss, MemoryRequest, MemoryStats, MemorySystem};
use crate::mmu::{PwcStats, Step, TranslationUnit};
use crate::pagetable::{OccupancyRow, PageTableSet};
use crate::trace::TraceRecord;
use crate::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct RequestCounts {
    pub data: u64,
    pub metadata: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct TlbCounters {
    pub l1: HitMiss,
    pub l2: HitMiss,
}

/// Integer counters for one core, or summed over all cores.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct CoreStats {
    pub records: u64,
    pub total_cycles: u64,
    pub translation_cycles: u64,
    pub data_access_cycles: u64,
    pub ptw_count: u64,
    pub ptw_latency_sum: u64,
    pub ptw_latency_max: u64,
    pub page_faults: u64,
    pub tlb: TlbCounters,
    pub pwc: Vec<PwcStats>,
    pub caches: Vec<CacheStats>,
    pub memory_requests: RequestCounts,
    pub bypassed_metadata: u64,
}

impl CoreStats {
    fn merge(&mut self, other: &CoreStats) {
        self.records += other.records;
        self.total_cycles += other.total_cycles;
        self.translation_cycles += other.translation_cycles;
        self.data_access_cycles += other.data_access_cycles;
        self.ptw_count += other.ptw_count;
        self.ptw_latency_sum += other.ptw_latency_sum;
        self.ptw_latency_max = self.ptw_latency_max.max(other.ptw_latency_max);
        self.page_faults += other.page_faults;
        self.tlb.l1.merge(&other.tlb.l1);
        self.tlb.l2.merge(&other.tlb.l2);
        if self.pwc.is_empty() {
            self.pwc = other.pwc.clone();
        } else {
            for (a, b) in self.pwc.iter_mut().zip(&other.pwc) {
                a.hits += b.hits;
                a.misses += b.misses;
            }
        }
        if self.caches.is_empty() {
            self.caches = other.caches.clone();
        } else {
            for (a, b) in self.caches.iter_mut().zip(&other.caches) {
                a.merge(b);
            }
        }
        self.memory_requests.data += other.memory_requests.data;
        self.memory_requests.metadata += other.memory_requests.metadata;
        self.bypassed_metadata += other.bypassed_metadata;
    }

    pub fn l1(&self) -> Option<&CacheStats> {
        self.caches.first()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimStats {
    pub cores: Vec<CoreStats>,
    /// Counters summed over cores.
    pub aggregate: CoreStats,
    /// Cycles until the last core finished.
    pub makespan_cycles: u64,
    pub memory: MemoryStats,
    pub mapped_pages: u64,
    /// Bytes of physical memory held by page-table nodes.
    pub metadata_bytes: u64,
    pub occupancy: Vec<OccupancyRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Tlb,
    Walk,
    Data,
}

#[derive(Debug, Clone, Copy)]
enum Segment {
    Delay(Phase, u64),
    Access(Phase, Step),
}

#[derive(Debug, Default)]
struct CoreRun {
    records: Vec<TraceRecord>,
    next: usize,
    clock: u64,
    plan: Vec<Segment>,
    pos: usize,
    /// The current access segment's private part has been charged and it
    /// waits for the controller.
    waiting: bool,
    walked: bool,
    walk_cycles: u64,
    stats: CoreStats,
}

impl CoreRun {
    fn charge(&mut self, phase: Phase, cycles: u64) {
        self.clock += cycles;
        match phase {
            Phase::Tlb => self.stats.translation_cycles += cycles,
            Phase::Walk => {
                self.stats.translation_cycles += cycles;
                self.walk_cycles += cycles;
            }
            Phase::Data => self.stats.data_access_cycles += cycles,
        }
    }

    fn finish_record(&mut self) {
        self.stats.records += 1;
        if self.walked {
            self.stats.ptw_count += 1;
            self.stats.ptw_latency_sum += self.walk_cycles;
            self.stats.ptw_latency_max = self.stats.ptw_latency_max.max(self.walk_cycles);
        }
        self.walked = false;
        self.walk_cycles = 0;
    }
}

/// One configured system: shared page tables, per-core MMUs and caches,
/// and the shared memory controller.
#[derive(Debug)]
pub struct Simulator {
    config: SimConfig,
    pt: PageTableSet,
    mmus: Vec<TranslationUnit>,
    mem: MemorySystem,
}

impl Simulator {
    /// `config` must already be resolved.
    pub fn new(config: &SimConfig) -> Result<Self, Error> {
        let config = config.clone().resolve()?;
        let pt = PageTableSet::new(config.page_table_mode(), config.memory.size_bytes())?;
        let mmus = (0..config.cores).map(|c| TranslationUnit::new(c, &config)).collect();
        let mem = MemorySystem::new(&config)?;
        Ok(Self { config, pt, mmus, mem })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn page_tables(&self) -> &PageTableSet {
        &self.pt
    }

    fn check_cores(&self, records: &[TraceRecord]) -> Result<(), Error> {
        let cores = self.config.cores;
        match records.iter().position(|r| usize::from(r.core) >= cores) {
            Some(index) => Err(Error::CoreOutOfRange {
                index,
                core: records[index].core.into(),
                cores,
            }),
            None => Ok(()),
        }
    }

    /// Maps every page the trace touches. Not timed.
    pub fn warmup(&mut self, records: &[TraceRecord]) -> Result<(), Error> {
        self.check_cores(records)?;
        for r in records {
            self.pt.map(r.va)?;
        }
        Ok(())
    }

    /// Replays `records` against the warmed-up system.
    pub fn run(mut self, records: &[TraceRecord]) -> Result<SimStats, Error> {
        self.check_cores(records)?;
        let mut cores: Vec<CoreRun> = (0..self.config.cores).map(|_| CoreRun::default()).collect();
        for r in records {
            cores[usize::from(r.core)].records.push(*r);
        }
        let mut touched: HashSet<u64> = HashSet::new();

        let mut ready = BinaryHeap::new();
        for (c, run) in cores.iter_mut().enumerate() {
            if let Some(arrival) = self.advance(c, run, &mut touched)? {
                ready.push(Reverse((arrival, c)));
            }
        }
        while let Some(Reverse((arrival, c))) = ready.pop() {
            let run = &mut cores[c];
            let Segment::Access(phase, step) = run.plan[run.pos] else {
                unreachable!("waiting core must sit on an access");
            };
            debug_assert!(run.waiting && run.clock == arrival);
            let latency = self.mem.controller_mut().memory_access(step.request.kind, arrival);
            match step.request.kind {
                AccessKind::Data => run.stats.memory_requests.data += 1,
                AccessKind::Metadata => run.stats.memory_requests.metadata += 1,
            }
            run.charge(phase, latency);
            run.waiting = false;
            run.pos += 1;
            if let Some(next) = self.advance(c, run, &mut touched)? {
                ready.push(Reverse((next, c)));
            }
        }

        Ok(self.collect(cores))
    }

    /// Runs core `c` until its next main-memory request (returning its
    /// arrival cycle) or until its trace is exhausted.
    fn advance(&mut self, c: usize, run: &mut CoreRun, touched: &mut HashSet<u64>) -> Result<Option<u64>, Error> {
        loop {
            if run.pos == run.plan.len() {
                if !run.plan.is_empty() {
                    run.finish_record();
                    run.plan.clear();
                    run.pos = 0;
                }
                let Some(&record) = run.records.get(run.next) else {
                    return Ok(None);
                };
                run.next += 1;
                self.plan_record(c, record, run, touched)?;
            }
            match run.plan[run.pos] {
                Segment::Delay(phase, cycles) => {
                    run.charge(phase, cycles);
                    run.pos += 1;
                }
                Segment::Access(phase, mut step) => {
                    run.charge(phase, step.delay);
                    step.request.issue_cycle = run.clock;
                    run.charge(phase, step.probe_cycles);
                    run.plan[run.pos] = Segment::Access(phase, step);
                    if step.to_memory {
                        run.waiting = true;
                        return Ok(Some(run.clock));
                    }
                    run.pos += 1;
                }
            }
        }
    }

    fn plan_record(
        &mut self,
        c: usize,
        record: TraceRecord,
        run: &mut CoreRun,
        touched: &mut HashSet<u64>,
    ) -> Result<(), Error> {
        let penalty = self.config.page_fault_penalty;
        if penalty > 0 {
            let size = self.config.page_table_mode().page_size();
            if touched.insert(record.va.page_number(size)) {
                run.stats.page_faults += 1;
                run.plan.push(Segment::Delay(Phase::Tlb, penalty));
            }
        }

        let caches = self.mem.caches_mut(c);
        let t = self.mmus[c].translate(record.va, &self.pt, caches)?;
        run.plan.push(Segment::Delay(Phase::Tlb, t.tlb.cycles));
        if let Some(walk) = &t.walk {
            run.walked = true;
            run.plan
                .extend(walk.steps.iter().map(|s| Segment::Access(Phase::Walk, *s)));
        }

        self.mem.check_range(t.pa)?;
        let request = MemoryRequest::data(c, t.pa, record.rw);
        let probe = self.mem.caches_mut(c).probe(&request);
        run.plan.push(Segment::Access(
            Phase::Data,
            Step {
                delay: 0,
                request,
                probe_cycles: probe.cycles,
                to_memory: probe.to_memory,
            },
        ));
        Ok(())
    }

    fn collect(self, cores: Vec<CoreRun>) -> SimStats {
        let mut per_core = Vec::with_capacity(cores.len());
        let mut aggregate = CoreStats::default();
        let mut makespan = 0;
        for (c, run) in cores.into_iter().enumerate() {
            let mut s = run.stats;
            s.total_cycles = run.clock;
            let mmu = self.mmus[c].stats();
            s.tlb = TlbCounters {
                l1: mmu.l1_tlb,
                l2: mmu.l2_tlb,
            };
            s.pwc = mmu.pwc;
            let caches = self.mem.caches(c);
            s.caches = caches.stats();
            s.bypassed_metadata = caches.bypassed();
            makespan = makespan.max(s.total_cycles);
            aggregate.merge(&s);
            per_core.push(s);
        }
        SimStats {
            cores: per_core,
            aggregate,
            makespan_cycles: makespan,
            memory: self.mem.controller().stats(),
            mapped_pages: self.pt.mapped_pages(),
            metadata_bytes: self.pt.metadata_bytes(),
            occupancy: self.pt.occupancy_report(),
        }
    }
}

/// Builds the page tables for `records` without timing anything.
pub fn warmup(config: &SimConfig, records: &[TraceRecord]) -> Result<PageTableSet, Error> {
    let mut sim = Simulator::new(config)?;
    sim.warmup(records)?;
    Ok(sim.pt)
}

/// Warm-up followed by the timed run.
pub fn run(config: &SimConfig, records: &[TraceRecord]) -> Result<SimStats, Error> {
    let mut sim = Simulator::new(config)?;
    sim.warmup(records)?;
    sim.run(records)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpeedupRow {
    pub mechanism: Mechanism,
    pub bypass: bool,
    pub total_cycles: u64,
    pub translation_cycles: u64,
    pub translation_fraction: f64,
    pub avg_ptw_latency: f64,
    /// Radix cycles divided by this mechanism's cycles.
    pub speedup: f64,
    pub note: &'static str,
}

const HUGE_NOTE: &str = "page-fault and fragmentation costs of 2MB allocation not modeled";

/// Runs every configuration on the same trace and reports speedups over
/// the radix baseline. The baseline is run separately when no radix
/// configuration is given.
pub fn compare(configs: &[SimConfig], records: &[TraceRecord]) -> Result<Vec<SpeedupRow>, Error> {
    let Some(first) = configs.first() else {
        return Ok(Vec::new());
    };
    for c in configs {
        if c.cores != first.cores {
            return Err(Error::ConfigMismatch("cores"));
        }
        if c.mode != first.mode {
            return Err(Error::ConfigMismatch("mode"));
        }
    }
    let results: Vec<(SimConfig, SimStats)> = configs
        .iter()
        .map(|c| Ok((c.clone().resolve()?, run(c, records)?)))
        .collect::<Result<_, Error>>()?;
    let baseline = match results
        .iter()
        .find(|(c, _)| c.mechanism == Mechanism::Radix && !c.bypass_enabled())
    {
        Some((_, s)) => s.makespan_cycles,
        None => run(&first.with_mechanism(Mechanism::Radix)?, records)?.makespan_cycles,
    };
    Ok(results
        .into_iter()
        .map(|(config, stats)| {
            let agg = &stats.aggregate;
            SpeedupRow {
                mechanism: config.mechanism,
                bypass: config.bypass_enabled(),
                total_cycles: stats.makespan_cycles,
                translation_cycles: agg.translation_cycles,
                translation_fraction: ratio(agg.translation_cycles, agg.total_cycles),
                avg_ptw_latency: ratio(agg.ptw_latency_sum, agg.ptw_count),
                speedup: ratio(baseline, stats.makespan_cycles),
                note: if config.mechanism == Mechanism::Huge {
                    HUGE_NOTE
                } else {
                    ""
                },
            }
        })
        .collect())
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn speedup_csv(rows: &[SpeedupRow]) -> String {
    let mut out = String::from(
        "mechanism,bypass,total_cycles,translation_cycles,translation_fraction,avg_ptw_latency,speedup,note\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{:.6},{:.3},{:.6},{}\n",
            r.mechanism,
            r.bypass,
            r.total_cycles,
            r.translation_cycles,
            r.translation_fraction,
            r.avg_ptw_latency,
            r.speedup,
            r.note
        ));
    }
    out
}
