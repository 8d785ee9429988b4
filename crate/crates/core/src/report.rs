//! Derived metrics and the JSON run report.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::config::SimConfig;
use crate::engine::SimStats;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Derived {
    /// Mean cycles per page walk, over walks only.
    pub avg_ptw_latency: Option<f64>,
    pub max_ptw_latency: u64,
    /// Translation cycles over total cycles, summed over cores.
    pub translation_fraction: Option<f64>,
    pub l1_miss_rate_data: Option<f64>,
    pub l1_miss_rate_metadata: Option<f64>,
    /// Lookups that missed both TLB levels.
    pub tlb_miss_rate: Option<f64>,
    pub pwc_hit_rate: BTreeMap<String, Option<f64>>,
    pub occupancy: BTreeMap<String, f64>,
    pub speedup_vs_radix: Option<f64>,
}

impl Derived {
    pub fn from_stats(stats: &SimStats) -> Self {
        let agg = &stats.aggregate;
        let ratio = |n: u64, d: u64| (d > 0).then(|| n as f64 / d as f64);
        let l1 = agg.l1();
        Derived {
            avg_ptw_latency: ratio(agg.ptw_latency_sum, agg.ptw_count),
            max_ptw_latency: agg.ptw_latency_max,
            translation_fraction: ratio(agg.translation_cycles, agg.total_cycles),
            l1_miss_rate_data: l1.and_then(|c| c.data.miss_rate()),
            l1_miss_rate_metadata: l1.and_then(|c| c.metadata.miss_rate()),
            tlb_miss_rate: ratio(agg.tlb.l2.misses, agg.tlb.l1.accesses()),
            pwc_hit_rate: agg
                .pwc
                .iter()
                .map(|p| (p.level.to_string(), ratio(p.hits, p.hits + p.misses)))
                .collect(),
            occupancy: stats.occupancy.iter().map(|r| (r.level.clone(), r.occupancy)).collect(),
            speedup_vs_radix: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub config: SimConfig,
    pub stats: SimStats,
    pub derived: Derived,
}

impl RunReport {
    pub fn new(config: SimConfig, stats: SimStats) -> Self {
        let derived = Derived::from_stats(&stats);
        Self { config, stats, derived }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}
