use std::collections::{HashMap, HashSet};

use proptest::prelude::*;

use ndpsim::config::{load_config, Mechanism, SimConfig};
use ndpsim::engine::run;
use ndpsim::memhier::{AccessKind, Cache, CacheHierarchy, MemoryController, MemoryRequest, Rw};
use ndpsim::mmu::TranslationUnit;
use ndpsim::pagetable::{Level, PageTableMode, PageTableSet};
use ndpsim::trace::{generate, GeneratorKind, GeneratorSpec, TraceRecord};
use ndpsim::{PhysicalAddress, VirtualAddress};

const MEM: u64 = 16 << 30;

/// Addresses inside a few 16GB windows, so random sequences share nodes.
fn clustered_va() -> impl Strategy<Value = VirtualAddress> {
    (0u64..4, 0u64..1 << 34).prop_map(|(w, off)| VirtualAddress::new((0x10 + w * 0x31) << 36 | off).unwrap())
}

fn table(mode: PageTableMode) -> PageTableSet {
    PageTableSet::new(mode, MEM).unwrap()
}

fn cfg(mech: Mechanism) -> SimConfig {
    load_config("{}").unwrap().with_mechanism(mech).unwrap()
}

fn request() -> impl Strategy<Value = MemoryRequest> {
    (any::<bool>(), 0u64..3000, any::<bool>()).prop_map(|(meta, line, write)| {
        if meta {
            MemoryRequest::metadata(0, PhysicalAddress::new((1 << 30) + line * 64))
        } else {
            MemoryRequest::data(
                0,
                PhysicalAddress::new(line * 64),
                if write { Rw::Write } else { Rw::Read },
            )
        }
    })
}

fn small_trace(cores: u16) -> impl Strategy<Value = Vec<TraceRecord>> {
    let kind = prop_oneof![
        Just(GeneratorKind::Gups),
        Just(GeneratorKind::Stream),
        Just(GeneratorKind::Linked),
        Just(GeneratorKind::Zipf)
    ];
    (kind, 1u64..5000, 1u64..1500, any::<u64>()).prop_map(move |(kind, pages, accesses, seed)| {
        let mut spec = GeneratorSpec::new(kind, pages, accesses);
        spec.cores = cores;
        spec.seed = seed;
        generate(&spec).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn walk_length_stability_and_alignment(vas in prop::collection::vec(clustered_va(), 1..100)) {
        for mode in [PageTableMode::Radix4, PageTableMode::FlattenedL21, PageTableMode::Huge2M, PageTableMode::Ideal] {
            let mut pt = table(mode);
            let mut first = HashMap::new();
            for va in &vas {
                let pa = pt.map(*va).unwrap();
                first.entry(va.page_number(mode.page_size())).or_insert(pa.value() >> mode.page_size().shift());
            }
            for va in &vas {
                let path = pt.resolve(*va).unwrap();
                prop_assert_eq!(path.len(), mode.walk_length());
                prop_assert_eq!(Some(&path.frame_number()), first.get(&va.page_number(mode.page_size())));
            }
            for node in pt.nodes() {
                prop_assert_eq!(node.base().value() % node.size_bytes(), 0);
            }
        }
    }

    #[test]
    fn metadata_and_data_frames_are_disjoint(vas in prop::collection::vec(clustered_va(), 1..100)) {
        for mode in [PageTableMode::Radix4, PageTableMode::FlattenedL21, PageTableMode::Huge2M] {
            let mut pt = table(mode);
            for va in &vas {
                pt.map(*va).unwrap();
            }
            let mut table_frames = HashSet::new();
            for node in pt.nodes() {
                let first = node.base().frame_4k();
                table_frames.extend(first..first + node.size_bytes() / 4096);
            }
            for va in &vas {
                let pa = pt.resolve(*va).unwrap().physical(*va);
                prop_assert!(!table_frames.contains(&pa.frame_4k()));
                prop_assert!(!pt.is_metadata(pa));
                for step in pt.resolve(*va).unwrap().steps() {
                    prop_assert!(pt.is_metadata(step.pte_address));
                }
            }
        }
    }

    #[test]
    fn radix_and_flat_assign_frames_identically(vas in prop::collection::vec(clustered_va(), 1..200)) {
        let mut radix = table(PageTableMode::Radix4);
        let mut flat = table(PageTableMode::FlattenedL21);
        let mut ideal = table(PageTableMode::Ideal);
        for va in &vas {
            let a = radix.map(*va).unwrap();
            prop_assert_eq!(a, flat.map(*va).unwrap());
            prop_assert_eq!(a, ideal.map(*va).unwrap());
        }
    }

    #[test]
    fn translations_agree_with_the_page_table(vas in prop::collection::vec(clustered_va(), 1..300)) {
        for (mech, bound) in [(Mechanism::Radix, 4), (Mechanism::Flat, 3), (Mechanism::Huge, 3), (Mechanism::Ndpage, 3), (Mechanism::Ideal, 0)] {
            let config = cfg(mech);
            let mut pt = table(config.page_table_mode());
            for va in &vas {
                pt.map(*va).unwrap();
            }
            let mut mmu = TranslationUnit::new(0, &config);
            let mut caches = CacheHierarchy::new(&config).unwrap();
            for va in &vas {
                let t = mmu.translate(*va, &pt, &mut caches).unwrap();
                prop_assert_eq!(t.pa, pt.resolve(*va).unwrap().physical(*va));
                let fetched = t.walk.as_ref().map_or(0, |w| w.steps.len());
                prop_assert!(fetched <= bound);
                // Immediately repeated: TLB hit, no walk.
                let again = mmu.translate(*va, &pt, &mut caches).unwrap();
                prop_assert!(again.walk.is_none());
                prop_assert_eq!(again.pa, t.pa);
            }
        }
    }

    #[test]
    fn bypass_is_pure_and_never_hurts_data(reqs in prop::collection::vec(request(), 0..3000)) {
        let l1 = load_config("{}").unwrap().l1;
        let mut on = CacheHierarchy::with_levels(vec![Cache::new("L1", &l1)], true).unwrap();
        let mut off = CacheHierarchy::with_levels(vec![Cache::new("L1", &l1)], false).unwrap();
        let mut deleted = CacheHierarchy::with_levels(vec![Cache::new("L1", &l1)], false).unwrap();
        for r in &reqs {
            on.probe(r);
            off.probe(r);
            if r.kind == AccessKind::Data {
                deleted.probe(r);
            }
        }
        let (on, off, deleted) = (&on.stats()[0], &off.stats()[0], &deleted.stats()[0]);
        prop_assert_eq!(on, deleted);
        prop_assert!(on.data.misses <= off.data.misses);
        let metas = reqs.iter().filter(|r| r.kind == AccessKind::Metadata).count() as u64;
        prop_assert_eq!(off.metadata.accesses(), metas);
        prop_assert_eq!(off.data.accesses() + off.metadata.accesses(), reqs.len() as u64);
    }

    #[test]
    fn controller_serves_in_arrival_order(mut arrivals in prop::collection::vec(0u64..5000, 1..300)) {
        arrivals.sort_unstable();
        let mut mc = MemoryController::new(110, 4);
        let mut last_done = 0;
        let mut last_departure = None;
        for a in arrivals {
            let lat = mc.memory_access(AccessKind::Data, a);
            let done = a + lat;
            prop_assert!(done >= last_done);
            prop_assert!(lat >= 110);
            let departure = done - 110;
            if let Some(prev) = last_departure {
                prop_assert!(departure >= prev + 4);
            }
            last_departure = Some(departure);
            last_done = done;
        }
    }

    #[test]
    fn generated_addresses_stay_in_core_regions(
        kind in prop_oneof![Just(GeneratorKind::Gups), Just(GeneratorKind::Stream), Just(GeneratorKind::Linked), Just(GeneratorKind::Zipf)],
        pages in 1u64..3000,
        cores in 1u16..5,
        seed in any::<u64>(),
    ) {
        let mut spec = GeneratorSpec::new(kind, pages, 500);
        spec.cores = cores;
        spec.seed = seed;
        let records = generate(&spec).unwrap();
        prop_assert_eq!(&records, &generate(&spec).unwrap());
        prop_assert_eq!(records.len() as u64, 500 * u64::from(cores));
        for r in &records {
            let base = spec.core_base(r.core);
            prop_assert!((base..base + pages * 4096).contains(&r.va.value()));
        }
        for i in 0..cores {
            for j in i + 1..cores {
                let (a, b) = (spec.core_base(i), spec.core_base(j));
                prop_assert!(a + pages * 4096 <= b || b + pages * 4096 <= a);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn runs_close_and_ideal_dominates(trace in small_trace(2)) {
        let config = |m: Mechanism| load_config(r#"{"cores": 2}"#).unwrap().with_mechanism(m).unwrap();
        let ideal = run(&config(Mechanism::Ideal), &trace).unwrap();
        prop_assert_eq!(ideal.aggregate.translation_cycles, 0);
        for m in [Mechanism::Radix, Mechanism::Flat, Mechanism::Huge, Mechanism::Ndpage] {
            let s = run(&config(m), &trace).unwrap();
            prop_assert_eq!(&s, &run(&config(m), &trace).unwrap());
            for c in &s.cores {
                prop_assert_eq!(c.translation_cycles + c.data_access_cycles, c.total_cycles);
                prop_assert!(c.memory_requests.metadata <= 4 * c.ptw_count);
                let l1 = &c.caches[0];
                prop_assert_eq!(l1.data.accesses(), c.records);
            }
            prop_assert!(ideal.makespan_cycles <= s.makespan_cycles, "{m}: {} > {}", ideal.makespan_cycles, s.makespan_cycles);
            if m == Mechanism::Radix || m == Mechanism::Flat {
                let pwc_levels: Vec<Level> = s.aggregate.pwc.iter().map(|p| p.level).collect();
                prop_assert_eq!(pwc_levels.len(), if m == Mechanism::Radix { 3 } else { 2 });
            }
        }
    }
}
