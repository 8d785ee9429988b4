//! Cache hierarchy and main-memory timing.
//!
//! Each core owns a private [`CacheHierarchy`] (L1 only in NDP mode,
//! L1/L2/L3 in CPU mode). All cores share one [`MemoryController`], a FIFO
//! server with a fixed access latency and a minimum spacing between
//! departures.

use serde::Serialize;
use thiserror::Error;

use crate::addr::PhysicalAddress;
use crate::config::{CacheConfig, ConfigError, SimConfig, SystemMode};
use crate::lru::SetAssoc;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum AccessKind {
    Data,
    /// Page-table entries fetched by the walker.
    Metadata,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Rw {
    Read,
    Write,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MemoryRequest {
    pub core: usize,
    pub address: PhysicalAddress,
    pub kind: AccessKind,
    pub rw: Rw,
    pub issue_cycle: u64,
}

impl MemoryRequest {
    pub fn metadata(core: usize, address: PhysicalAddress) -> Self {
        Self {
            core,
            address,
            kind: AccessKind::Metadata,
            rw: Rw::Read,
            issue_cycle: 0,
        }
    }

    pub fn data(core: usize, address: PhysicalAddress, rw: Rw) -> Self {
        Self {
            core,
            address,
            kind: AccessKind::Data,
            rw,
            issue_cycle: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MemError {
    #[error("physical address {address} beyond installed memory ({limit:#x} bytes)")]
    AddressOutOfPhysicalRange { address: PhysicalAddress, limit: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct HitMiss {
    pub hits: u64,
    pub misses: u64,
}

impl HitMiss {
    pub fn accesses(&self) -> u64 {
        self.hits + self.misses
    }

    pub fn record(&mut self, hit: bool) {
        if hit {
            self.hits += 1;
        } else {
            self.misses += 1;
        }
    }

    pub fn miss_rate(&self) -> Option<f64> {
        (self.accesses() > 0).then(|| self.misses as f64 / self.accesses() as f64)
    }

    pub fn hit_rate(&self) -> Option<f64> {
        (self.accesses() > 0).then(|| self.hits as f64 / self.accesses() as f64)
    }

    pub fn merge(&mut self, other: &HitMiss) {
        self.hits += other.hits;
        self.misses += other.misses;
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct CacheStats {
    pub level: String,
    pub data: HitMiss,
    pub metadata: HitMiss,
    /// Dirty lines evicted. Write-backs drain through a write buffer and
    /// are not timed.
    pub writebacks: u64,
}

impl CacheStats {
    pub fn kind(&self, kind: AccessKind) -> &HitMiss {
        match kind {
            AccessKind::Data => &self.data,
            AccessKind::Metadata => &self.metadata,
        }
    }

    pub fn merge(&mut self, other: &CacheStats) {
        self.data.merge(&other.data);
        self.metadata.merge(&other.metadata);
        self.writebacks += other.writebacks;
    }
}

/// One physically indexed, write-back, write-allocate LRU cache.
#[derive(Debug, Clone)]
pub struct Cache {
    latency: u64,
    line_bytes: u64,
    /// line number -> dirty
    lines: SetAssoc<u64, bool>,
    stats: CacheStats,
}

impl Cache {
    pub fn new(name: &str, config: &CacheConfig) -> Self {
        Self {
            latency: config.latency,
            line_bytes: config.line_bytes as u64,
            lines: SetAssoc::new(config.sets(), config.ways),
            stats: CacheStats {
                level: name.to_string(),
                ..CacheStats::default()
            },
        }
    }

    pub fn latency(&self) -> u64 {
        self.latency
    }

    pub fn stats(&self) -> &CacheStats {
        &self.stats
    }

    fn set_of(&self, line: u64) -> usize {
        (line % self.lines.sets() as u64) as usize
    }

    /// Probes and updates LRU state; allocates the line on a miss.
    pub fn access(&mut self, address: PhysicalAddress, kind: AccessKind, rw: Rw) -> bool {
        let line = address.line(self.line_bytes);
        let set = self.set_of(line);
        let write = rw == Rw::Write;
        let hit = match self.lines.lookup(set, line) {
            Some(dirty) => {
                *dirty |= write;
                true
            }
            None => {
                if let Some((_, true)) = self.lines.insert(set, line, write) {
                    self.stats.writebacks += 1;
                }
                false
            }
        };
        match kind {
            AccessKind::Data => self.stats.data.record(hit),
            AccessKind::Metadata => self.stats.metadata.record(hit),
        }
        hit
    }

    pub fn contains(&self, address: PhysicalAddress) -> bool {
        let line = address.line(self.line_bytes);
        self.lines.peek(self.set_of(line), line).is_some()
    }

    /// Resident lines of the set holding `address`, most recent first.
    pub fn set_contents(&self, address: PhysicalAddress) -> Vec<u64> {
        let line = address.line(self.line_bytes);
        self.lines.recency_order(self.set_of(line))
    }
}

/// Outcome of walking a request through a core's caches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Probe {
    /// Sum of the latencies of the levels probed.
    pub cycles: u64,
    pub to_memory: bool,
    pub bypassed: bool,
}

/// A core's private caches.
#[derive(Debug, Clone)]
pub struct CacheHierarchy {
    levels: Vec<Cache>,
    bypass_metadata: bool,
    bypassed: u64,
}

impl CacheHierarchy {
    pub fn new(config: &SimConfig) -> Result<Self, ConfigError> {
        let mut levels = vec![Cache::new("L1", &config.l1)];
        if config.mode == SystemMode::Cpu {
            levels.push(Cache::new("L2", &config.l2));
            levels.push(Cache::new("L3", &config.l3));
        }
        Self::with_levels(levels, config.bypass_enabled())
    }

    /// Bypass is only coherent with a single cache level: skipping an
    /// inclusive upper level would break inclusion.
    pub fn with_levels(levels: Vec<Cache>, bypass_metadata: bool) -> Result<Self, ConfigError> {
        if bypass_metadata && levels.len() > 1 {
            return Err(ConfigError::new("bypass", "PTE bypass requires a single cache level"));
        }
        Ok(Self {
            levels,
            bypass_metadata,
            bypassed: 0,
        })
    }

    pub fn levels(&self) -> &[Cache] {
        &self.levels
    }

    pub fn bypasses_metadata(&self) -> bool {
        self.bypass_metadata
    }

    /// Metadata requests sent straight to memory.
    pub fn bypassed(&self) -> u64 {
        self.bypassed
    }

    pub fn probe(&mut self, req: &MemoryRequest) -> Probe {
        if self.bypass_metadata && req.kind == AccessKind::Metadata {
            self.bypassed += 1;
            return Probe {
                cycles: 0,
                to_memory: true,
                bypassed: true,
            };
        }
        let mut cycles = 0;
        for level in &mut self.levels {
            cycles += level.latency;
            if level.access(req.address, req.kind, req.rw) {
                return Probe {
                    cycles,
                    to_memory: false,
                    bypassed: false,
                };
            }
        }
        Probe {
            cycles,
            to_memory: true,
            bypassed: false,
        }
    }

    pub fn stats(&self) -> Vec<CacheStats> {
        self.levels.iter().map(|c| c.stats.clone()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct MemoryStats {
    pub data_requests: u64,
    pub metadata_requests: u64,
    /// Total cycles requests spent waiting behind earlier ones.
    pub queue_cycles: u64,
}

impl MemoryStats {
    pub fn requests(&self) -> u64 {
        self.data_requests + self.metadata_requests
    }
}

/// Shared FIFO memory controller. Callers present requests in order of
/// (arrival cycle, core id).
#[derive(Debug, Clone)]
pub struct MemoryController {
    access_latency: u64,
    service_interval: u64,
    last_departure: Option<u64>,
    stats: MemoryStats,
}

impl MemoryController {
    pub fn new(access_latency: u64, service_interval: u64) -> Self {
        Self {
            access_latency,
            service_interval,
            last_departure: None,
            stats: MemoryStats::default(),
        }
    }

    pub fn access_latency(&self) -> u64 {
        self.access_latency
    }

    pub fn service_interval(&self) -> u64 {
        self.service_interval
    }

    pub fn stats(&self) -> MemoryStats {
        self.stats
    }

    /// Latency from `arrival` until the data returns.
    pub fn memory_access(&mut self, kind: AccessKind, arrival: u64) -> u64 {
        let departure = match self.last_departure {
            Some(last) => arrival.max(last + self.service_interval),
            None => arrival,
        };
        self.last_departure = Some(departure);
        let wait = departure - arrival;
        self.stats.queue_cycles += wait;
        match kind {
            AccessKind::Data => self.stats.data_requests += 1,
            AccessKind::Metadata => self.stats.metadata_requests += 1,
        }
        wait + self.access_latency
    }
}

/// All cores' caches plus the shared controller.
#[derive(Debug, Clone)]
pub struct MemorySystem {
    caches: Vec<CacheHierarchy>,
    controller: MemoryController,
    physical_bytes: u64,
}

impl MemorySystem {
    pub fn new(config: &SimConfig) -> Result<Self, ConfigError> {
        let caches = (0..config.cores)
            .map(|_| CacheHierarchy::new(config))
            .collect::<Result<_, _>>()?;
        let (latency, interval) = config.memory.timing();
        Ok(Self {
            caches,
            controller: MemoryController::new(latency, interval),
            physical_bytes: config.memory.size_bytes(),
        })
    }

    pub fn caches(&self, core: usize) -> &CacheHierarchy {
        &self.caches[core]
    }

    pub fn caches_mut(&mut self, core: usize) -> &mut CacheHierarchy {
        &mut self.caches[core]
    }

    pub fn controller(&self) -> &MemoryController {
        &self.controller
    }

    pub fn controller_mut(&mut self) -> &mut MemoryController {
        &mut self.controller
    }

    pub fn check_range(&self, address: PhysicalAddress) -> Result<(), MemError> {
        if address.value() >= self.physical_bytes {
            return Err(MemError::AddressOutOfPhysicalRange {
                address,
                limit: self.physical_bytes,
            });
        }
        Ok(())
    }

    /// Runs one request to completion starting at `now` and returns its
    /// latency.
    pub fn access(&mut self, req: &MemoryRequest, now: u64) -> Result<u64, MemError> {
        self.check_range(req.address)?;
        let probe = self.caches[req.core].probe(req);
        let mut latency = probe.cycles;
        if probe.to_memory {
            latency += self.controller.memory_access(req.kind, now + probe.cycles);
        }
        Ok(latency)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::load_config;
    use std::collections::VecDeque;

    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ndp(bypass: bool) -> SimConfig {
        load_config(&format!(r#"{{"bypass": {bypass}}}"#)).unwrap()
    }

    fn pa(v: u64) -> PhysicalAddress {
        PhysicalAddress::new(v)
    }

    /// Move-to-front list model of one LRU set, independent of `SetAssoc`.
    struct RefLru {
        sets: Vec<VecDeque<u64>>,
        ways: usize,
    }

    impl RefLru {
        fn new(sets: usize, ways: usize) -> Self {
            Self {
                sets: vec![VecDeque::new(); sets],
                ways,
            }
        }

        fn access(&mut self, line: u64) -> bool {
            let n = self.sets.len() as u64;
            let set = &mut self.sets[(line % n) as usize];
            let hit = if let Some(p) = set.iter().position(|&l| l == line) {
                set.remove(p);
                true
            } else {
                if set.len() == self.ways {
                    set.pop_back();
                }
                false
            };
            set.push_front(line);
            hit
        }
    }

    #[test]
    fn bypassed_metadata_goes_straight_to_memory() {
        let mut mem = MemorySystem::new(&ndp(true)).unwrap();
        let req = MemoryRequest::metadata(0, pa(0x4000));
        assert_eq!(mem.access(&req, 0).unwrap(), 110);
        let l1 = &mem.caches(0).levels()[0];
        assert!(!l1.contains(pa(0x4000)));
        assert_eq!(l1.stats().metadata.accesses(), 0);
        assert_eq!(mem.caches(0).bypassed(), 1);
    }

    #[test]
    fn repeated_data_read_hits_in_l1() {
        let mut mem = MemorySystem::new(&ndp(false)).unwrap();
        let req = MemoryRequest::data(0, pa(0x1000), Rw::Read);
        assert_eq!(mem.access(&req, 0).unwrap(), 4 + 110);
        assert_eq!(mem.access(&req, 1000).unwrap(), 4);
        let s = mem.caches(0).levels()[0].stats();
        assert_eq!((s.data.hits, s.data.misses), (1, 1));
    }

    #[test]
    fn ninth_line_in_a_set_evicts_the_first() {
        let config = ndp(false);
        let mut cache = Cache::new("L1", &config.l1);
        let sets = config.l1.sets() as u64;
        let stride = sets * 64;
        let mut reference = RefLru::new(sets as usize, 8);
        for i in 0..9 {
            let hit = cache.access(pa(i * stride), AccessKind::Data, Rw::Read);
            assert_eq!(hit, reference.access(i * stride / 64));
        }
        let first = cache.access(pa(0), AccessKind::Data, Rw::Read);
        assert!(!first);
        assert_eq!(first, reference.access(0));
    }

    #[test]
    fn cache_matches_reference_lru() {
        let config = ndp(false);
        let mut cache = Cache::new("L1", &config.l1);
        let mut reference = RefLru::new(config.l1.sets(), config.l1.ways);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100_000 {
            // 2048 lines over 64 sets keeps every set under pressure.
            let line = rng.random_range(0..2048u64);
            let hit = cache.access(pa(line * 64), AccessKind::Data, Rw::Read);
            assert_eq!(hit, reference.access(line));
        }
        for set in 0..config.l1.sets() as u64 {
            let expected: Vec<u64> = reference.sets[set as usize].iter().copied().collect();
            assert_eq!(cache.set_contents(pa(set * 64)), expected);
        }
    }

    #[test]
    fn controller_queues_fifo() {
        let mut c = MemoryController::new(110, 4);
        assert_eq!(c.memory_access(AccessKind::Data, 0), 110);
        let mut c = MemoryController::new(110, 4);
        for k in 0..6 {
            assert_eq!(c.memory_access(AccessKind::Data, 50), 110 + k * 4);
        }
        assert_eq!(c.stats().queue_cycles, 4 * (1 + 2 + 3 + 4 + 5));
        // A late arrival after the queue drained waits for nothing.
        assert_eq!(c.memory_access(AccessKind::Metadata, 1000), 110);
        assert_eq!(c.stats().metadata_requests, 1);
    }

    #[test]
    fn bypass_rejected_with_multiple_levels() {
        let config = load_config(r#"{"mode": "cpu"}"#).unwrap();
        let levels = vec![Cache::new("L1", &config.l1), Cache::new("L2", &config.l2)];
        assert!(CacheHierarchy::with_levels(levels.clone(), true).is_err());
        assert!(CacheHierarchy::with_levels(levels, false).is_ok());
        assert!(CacheHierarchy::with_levels(vec![Cache::new("L1", &config.l1)], true).is_ok());
    }

    #[test]
    fn cpu_mode_probes_three_levels() {
        let config = load_config(r#"{"mode": "cpu"}"#).unwrap();
        let mut mem = MemorySystem::new(&config).unwrap();
        let req = MemoryRequest::data(0, pa(0x1000), Rw::Write);
        assert_eq!(mem.access(&req, 0).unwrap(), 4 + 16 + 35 + 165);
        assert_eq!(mem.access(&req, 500).unwrap(), 4);
        assert_eq!(mem.caches(0).stats().len(), 3);
    }

    #[test]
    fn dirty_evictions_are_counted() {
        let config = ndp(false);
        let mut cache = Cache::new("L1", &config.l1);
        let stride = config.l1.sets() as u64 * 64;
        for i in 0..9 {
            cache.access(pa(i * stride), AccessKind::Data, Rw::Write);
        }
        assert_eq!(cache.stats().writebacks, 1);
    }

    #[test]
    fn out_of_range_address() {
        let mut mem = MemorySystem::new(&ndp(false)).unwrap();
        let req = MemoryRequest::data(0, pa(16 << 30), Rw::Read);
        assert!(matches!(
            mem.access(&req, 0),
            Err(MemError::AddressOutOfPhysicalRange { .. })
        ));
    }
}
