//! Simulation configuration.
//!
//! Every knob has a default so an empty JSON object is a complete
//! configuration: one NDP core with a 4-level radix table, a 32KB L1 and
//! HBM2 memory. [`SimConfig::resolve`] fills in the mode-dependent
//! defaults and validates combinations; reports echo the resolved form.

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::pagetable::PageTableMode;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("config error at `{path}`: {message}")]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SystemMode {
    /// Single private L1 per core, HBM2 by default.
    Ndp,
    /// Private L1/L2/L3 per core, DDR4 by default.
    Cpu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mechanism {
    Radix,
    Flat,
    Huge,
    Ideal,
    /// Flattened PL2/PL1 table with PTE cache bypass.
    Ndpage,
}

impl Mechanism {
    pub const ALL: [Mechanism; 5] = [
        Mechanism::Radix,
        Mechanism::Flat,
        Mechanism::Huge,
        Mechanism::Ndpage,
        Mechanism::Ideal,
    ];

    pub const fn page_table_mode(self) -> PageTableMode {
        match self {
            Mechanism::Radix => PageTableMode::Radix4,
            Mechanism::Flat | Mechanism::Ndpage => PageTableMode::FlattenedL21,
            Mechanism::Huge => PageTableMode::Huge2M,
            Mechanism::Ideal => PageTableMode::Ideal,
        }
    }

    pub const fn name(self) -> &'static str {
        match self {
            Mechanism::Radix => "radix",
            Mechanism::Flat => "flat",
            Mechanism::Huge => "huge",
            Mechanism::Ideal => "ideal",
            Mechanism::Ndpage => "ndpage",
        }
    }
}

impl fmt::Display for Mechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Mechanism {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Mechanism::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| ConfigError::new("mechanism", format!("unknown mechanism `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MemoryKind {
    Hbm2,
    Ddr4,
}

impl MemoryKind {
    /// (access latency, service interval) in core cycles.
    pub const fn timing(self) -> (u64, u64) {
        match self {
            MemoryKind::Hbm2 => (110, 2),
            MemoryKind::Ddr4 => (165, 4),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TlbConfig {
    pub entries: usize,
    pub ways: usize,
    pub latency: u64,
}

impl TlbConfig {
    pub fn sets(&self) -> usize {
        self.entries / self.ways
    }

    fn validate(&self, key: &str) -> Result<(), ConfigError> {
        geometry(key, self.entries, self.ways)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CacheConfig {
    pub size_kb: usize,
    #[serde(default = "default_line")]
    pub line_bytes: usize,
    pub ways: usize,
    pub latency: u64,
}

fn default_line() -> usize {
    64
}

impl CacheConfig {
    pub fn lines(&self) -> usize {
        self.size_kb * 1024 / self.line_bytes
    }

    pub fn sets(&self) -> usize {
        self.lines() / self.ways
    }

    fn validate(&self, key: &str) -> Result<(), ConfigError> {
        if !self.line_bytes.is_power_of_two() {
            return Err(ConfigError::new(format!("{key}.line_bytes"), "must be a power of two"));
        }
        if !(self.size_kb * 1024).is_multiple_of(self.line_bytes) {
            return Err(ConfigError::new(
                format!("{key}.size_kb"),
                "not a whole number of lines",
            ));
        }
        geometry(key, self.lines(), self.ways)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PwcConfig {
    pub entries: usize,
    pub ways: usize,
    pub latency: u64,
}

impl PwcConfig {
    pub fn sets(&self) -> usize {
        self.entries / self.ways
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemoryConfig {
    pub kind: Option<MemoryKind>,
    pub latency: Option<u64>,
    pub service_interval: Option<u64>,
    pub size_gb: u64,
}

impl Default for MemoryConfig {
    fn default() -> Self {
        Self {
            kind: None,
            latency: None,
            service_interval: None,
            size_gb: 16,
        }
    }
}

impl MemoryConfig {
    pub fn size_bytes(&self) -> u64 {
        self.size_gb << 30
    }

    /// Resolved (latency, service interval).
    pub fn timing(&self) -> (u64, u64) {
        let (lat, interval) = self.kind.unwrap_or(MemoryKind::Hbm2).timing();
        (self.latency.unwrap_or(lat), self.service_interval.unwrap_or(interval))
    }
}

fn geometry(key: &str, entries: usize, ways: usize) -> Result<(), ConfigError> {
    if ways == 0 {
        return Err(ConfigError::new(format!("{key}.ways"), "must be at least 1"));
    }
    if entries == 0 || !entries.is_multiple_of(ways) {
        return Err(ConfigError::new(
            format!("{key}.entries"),
            format!("{entries} entries is not a positive multiple of {ways} ways"),
        ));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub mode: SystemMode,
    pub mechanism: Mechanism,
    /// Route PTE fetches around the caches. Implied by `ndpage`.
    pub bypass: Option<bool>,
    pub cores: usize,
    pub seed: u64,
    pub l1: CacheConfig,
    pub l2: CacheConfig,
    /// Per-core share of the last-level cache.
    pub l3: CacheConfig,
    pub dtlb: TlbConfig,
    pub itlb: TlbConfig,
    pub l2tlb: TlbConfig,
    pub pwc: PwcConfig,
    pub memory: MemoryConfig,
    /// Cycles charged on the first timed touch of each page.
    pub page_fault_penalty: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            mode: SystemMode::Ndp,
            mechanism: Mechanism::Radix,
            bypass: None,
            cores: 1,
            seed: 0,
            l1: CacheConfig {
                size_kb: 32,
                line_bytes: 64,
                ways: 8,
                latency: 4,
            },
            l2: CacheConfig {
                size_kb: 512,
                line_bytes: 64,
                ways: 16,
                latency: 16,
            },
            l3: CacheConfig {
                size_kb: 2048,
                line_bytes: 64,
                ways: 16,
                latency: 35,
            },
            dtlb: TlbConfig {
                entries: 64,
                ways: 4,
                latency: 1,
            },
            itlb: TlbConfig {
                entries: 128,
                ways: 4,
                latency: 1,
            },
            l2tlb: TlbConfig {
                entries: 1536,
                ways: 12,
                latency: 12,
            },
            pwc: PwcConfig {
                entries: 16,
                ways: 4,
                latency: 1,
            },
            memory: MemoryConfig::default(),
            page_fault_penalty: 0,
        }
    }
}

impl SimConfig {
    pub fn page_table_mode(&self) -> PageTableMode {
        self.mechanism.page_table_mode()
    }

    pub fn bypass_enabled(&self) -> bool {
        self.mechanism == Mechanism::Ndpage || self.bypass == Some(true)
    }

    /// Fills mode-dependent defaults and rejects invalid combinations.
    pub fn resolve(mut self) -> Result<Self, ConfigError> {
        if self.cores == 0 {
            return Err(ConfigError::new("cores", "must be at least 1"));
        }
        if self.memory.size_gb == 0 {
            return Err(ConfigError::new("memory.size_gb", "must be at least 1"));
        }
        self.l1.validate("l1")?;
        if self.mode == SystemMode::Cpu {
            self.l2.validate("l2")?;
            self.l3.validate("l3")?;
        }
        self.dtlb.validate("dtlb")?;
        self.itlb.validate("itlb")?;
        self.l2tlb.validate("l2tlb")?;
        geometry("pwc", self.pwc.entries, self.pwc.ways)?;

        if self.mechanism == Mechanism::Ndpage && self.bypass == Some(false) {
            return Err(ConfigError::new("bypass", "mechanism `ndpage` always bypasses PTEs"));
        }
        let bypass = self.bypass_enabled();
        if bypass && self.mode == SystemMode::Cpu {
            let key = if self.mechanism == Mechanism::Ndpage {
                "mechanism"
            } else {
                "bypass"
            };
            return Err(ConfigError::new(
                key,
                "PTE bypass needs a single cache level (mode `ndp`); it would break inclusion in a multi-level hierarchy",
            ));
        }
        self.bypass = Some(bypass);

        let kind = self.memory.kind.unwrap_or(match self.mode {
            SystemMode::Ndp => MemoryKind::Hbm2,
            SystemMode::Cpu => MemoryKind::Ddr4,
        });
        let (lat, interval) = kind.timing();
        self.memory.kind = Some(kind);
        self.memory.latency.get_or_insert(lat);
        self.memory.service_interval.get_or_insert(interval);
        Ok(self)
    }

    /// Copy of this configuration running `mechanism`, with the bypass
    /// flag reset to that mechanism's default.
    pub fn with_mechanism(&self, mechanism: Mechanism) -> Result<Self, ConfigError> {
        let mut c = self.clone();
        c.mechanism = mechanism;
        c.bypass = None;
        c.resolve()
    }
}

/// Parses and resolves a JSON configuration document. Keys missing at any
/// depth take their default values.
pub fn load_config(json: &str) -> Result<SimConfig, ConfigError> {
    let user: Value = serde_json::from_str(json).map_err(|e| ConfigError::new("<root>", e.to_string()))?;
    if !user.is_object() {
        return Err(ConfigError::new("<root>", "expected a JSON object"));
    }
    let mut merged = serde_json::to_value(SimConfig::default()).expect("default config serializes");
    overlay(&mut merged, user);
    let raw: SimConfig = serde_path_to_error::deserialize(merged).map_err(|e| {
        let path = e.path().to_string();
        ConfigError::new(
            if path == "." { String::from("<root>") } else { path },
            e.into_inner().to_string(),
        )
    })?;
    raw.resolve()
}

fn overlay(base: &mut Value, user: Value) {
    match (base, user) {
        (Value::Object(b), Value::Object(u)) => {
            for (k, v) in u {
                match b.get_mut(&k) {
                    Some(slot) => overlay(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_is_default_ndp_radix() {
        let c = load_config("{}").unwrap();
        assert_eq!(c.mode, SystemMode::Ndp);
        assert_eq!(c.mechanism, Mechanism::Radix);
        assert_eq!(c.cores, 1);
        assert_eq!(c.bypass, Some(false));
        assert_eq!(c.memory.kind, Some(MemoryKind::Hbm2));
        assert_eq!(c.memory.timing(), (110, 2));
        assert_eq!(
            c.l1,
            CacheConfig {
                size_kb: 32,
                line_bytes: 64,
                ways: 8,
                latency: 4
            }
        );
        assert_eq!(
            c.dtlb,
            TlbConfig {
                entries: 64,
                ways: 4,
                latency: 1
            }
        );
        assert_eq!(c.l2tlb.entries, 1536);
        assert_eq!(c.l2tlb.latency, 12);
        assert_eq!(c.itlb.entries, 128);
    }

    #[test]
    fn partial_object_keeps_defaults() {
        let c = load_config(r#"{"cores": 4, "mechanism": "ndpage"}"#).unwrap();
        assert_eq!(c.cores, 4);
        assert!(c.bypass_enabled());
        assert_eq!(c.page_table_mode(), PageTableMode::FlattenedL21);
        assert_eq!(c.l1.size_kb, 32);
        let c = load_config(r#"{"l1": {"size_kb": 64, "ways": 8, "latency": 5}}"#).unwrap();
        assert_eq!(c.l1.line_bytes, 64);
        assert_eq!(c.l1.sets(), 128);
        let c = load_config(r#"{"l2": {"ways": 8}, "pwc": {"entries": 32}}"#).unwrap();
        assert_eq!(
            c.l2,
            CacheConfig {
                size_kb: 512,
                line_bytes: 64,
                ways: 8,
                latency: 16
            }
        );
        assert_eq!((c.pwc.entries, c.pwc.ways), (32, 4));
    }

    #[test]
    fn cpu_with_bypass_is_rejected() {
        let e = load_config(r#"{"mode":"cpu","mechanism":"ndpage"}"#).unwrap_err();
        assert_eq!(e.path, "mechanism");
        let e = load_config(r#"{"mode":"cpu","bypass":true}"#).unwrap_err();
        assert_eq!(e.path, "bypass");
        assert!(load_config(r#"{"mode":"ndp","bypass":true}"#).is_ok());
        let c = load_config(r#"{"mode":"cpu","bypass":false}"#).unwrap();
        assert_eq!(c.memory.kind, Some(MemoryKind::Ddr4));
        assert_eq!(c.memory.timing(), (165, 4));
    }

    #[test]
    fn errors_name_the_key_path() {
        let e = load_config(r#"{"l1": {"ways": "eight"}}"#).unwrap_err();
        assert_eq!(e.path, "l1.ways");
        let e = load_config(r#"{"memory": {"kind": "sram"}}"#).unwrap_err();
        assert_eq!(e.path, "memory.kind");
        let e = load_config(r#"{"dtlb": {"entries": 65, "ways": 4, "latency": 1}}"#).unwrap_err();
        assert_eq!(e.path, "dtlb.entries");
        let e = load_config(r#"{"bogus": 1}"#).unwrap_err();
        assert!(e.message.contains("bogus"), "{e}");
        let e = load_config(r#"{"cores": 0}"#).unwrap_err();
        assert_eq!(e.path, "cores");
        let e = load_config(r#"{"mechanism":"ndpage","bypass":false}"#).unwrap_err();
        assert_eq!(e.path, "bypass");
    }

    #[test]
    fn explicit_memory_timing_wins() {
        let c = load_config(r#"{"memory": {"kind": "ddr4", "latency": 200}}"#).unwrap();
        assert_eq!(c.memory.timing(), (200, 4));
    }

    #[test]
    fn resolved_config_round_trips() {
        let c = load_config(r#"{"mechanism":"huge","seed":9}"#).unwrap();
        let json = serde_json::to_string(&c).unwrap();
        assert_eq!(load_config(&json).unwrap(), c);
    }

    #[test]
    fn with_mechanism_resets_bypass() {
        let c = load_config(r#"{"mechanism":"ndpage"}"#).unwrap();
        let flat = c.with_mechanism(Mechanism::Flat).unwrap();
        assert!(!flat.bypass_enabled());
        assert_eq!("ideal".parse::<Mechanism>().unwrap(), Mechanism::Ideal);
        assert!("ech".parse::<Mechanism>().is_err());
    }
}
