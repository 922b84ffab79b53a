mod common;

use proptest::prelude::*;

use smvirt::virt::{AllocationOutcome, Eviction, Location, MappingTable, OversubLimits, Owner};
use smvirt::workload::ResourceKind;

proptest! {
    #[test]
    fn conservation_under_random_traces(
        kind in common::kind_strategy(),
        o in prop::sample::select(vec![1.0, 1.25, 1.5, 2.0]),
        ops in prop::collection::vec(common::arb_op(2048), 1..80),
    ) {
        common::run_trace(kind, o, &ops)?;
    }

    #[test]
    fn no_swap_without_oversubscription(
        kind in common::kind_strategy(),
        ops in prop::collection::vec((any::<bool>(), 0u64..1500, any::<usize>()), 1..80),
    ) {
        let cfg = common::gen_b();
        let mut table = MappingTable::new(kind, 4096);
        let limits = common::limits_all(1.0);
        let mut live = Vec::new();
        for (acquire, size, i) in ops {
            if acquire {
                let out = table.acquire(size, Owner::Warp(0), &limits, &cfg);
                prop_assert!(!matches!(out, AllocationOutcome::Swapped(..)));
                live.extend(out.id());
            } else if !live.is_empty() {
                table.release(live.remove(i % live.len())).unwrap();
            }
            prop_assert_eq!(table.swap_in_use(), 0);
            prop_assert!(table.entries().all(|(_, e)| e.location == Location::Physical));
        }
    }

    #[test]
    fn acquire_release_round_trip(
        sizes in prop::collection::vec(0u64..3000, 1..10),
        extra in 0u64..6000,
    ) {
        let cfg = common::gen_b();
        let mut table = MappingTable::new(ResourceKind::Scratchpad, 4096);
        let limits = OversubLimits::new(2.0);
        let mut limits_up = limits;
        limits_up.set(ResourceKind::Scratchpad, 2.0);
        for s in sizes {
            table.acquire(s, Owner::Block(0), &limits_up, &cfg);
        }
        let before = (table.physical_in_use(), table.swap_in_use());
        if let Some(id) = table.acquire(extra, Owner::Block(1), &limits_up, &cfg).id() {
            table.release(id).unwrap();
        }
        prop_assert_eq!((table.physical_in_use(), table.swap_in_use()), before);
    }
}

#[test]
fn swapped_acquire_and_swap_in_costs() {
    let cfg = common::gen_b();
    let mut t = MappingTable::new(ResourceKind::Scratchpad, 4096);
    let mut limits = OversubLimits::new(2.0);
    limits.set(ResourceKind::Scratchpad, 1.5);
    t.acquire(4096, Owner::Block(0), &limits, &cfg);
    let out = t.acquire(1024, Owner::Block(1), &limits, &cfg);
    assert!(matches!(out, AllocationOutcome::Swapped(_, 3200)));

    let mut regs = MappingTable::new(ResourceKind::Registers, 512);
    let full = regs
        .acquire(512, Owner::Warp(0), &common::limits_all(2.0), &cfg)
        .id()
        .unwrap();
    let id = regs
        .acquire(256, Owner::Warp(1), &common::limits_all(2.0), &cfg)
        .id()
        .unwrap();
    regs.release(full).unwrap();
    assert_eq!(regs.swap_in(id, &cfg).unwrap(), 1600);
}

#[test]
fn evicts_whole_barrier_entry() {
    let cfg = common::gen_b();
    let mut t = MappingTable::new(ResourceKind::Scratchpad, 4096);
    let l = common::limits_all(2.0);
    let runnable = t.acquire(2048, Owner::Block(0), &l, &cfg).id().unwrap();
    let waiting = t.acquire(2048, Owner::Block(1), &l, &cfg).id().unwrap();
    match t.evict(1024, &cfg, common::rank).unwrap() {
        Eviction::Evicted { victims, stall } => {
            assert_eq!(victims, vec![waiting]);
            assert_eq!(stall, 16 * 400);
        }
        Eviction::Denied => panic!("expected an eviction"),
    }
    assert_eq!(t.get(runnable).unwrap().location, Location::Physical);
    assert_eq!(t.swap_in_use(), 2048);
    assert_eq!(t.evict(2048, &cfg, common::rank).unwrap(), Eviction::Denied);
}
