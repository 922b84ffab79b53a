#![allow(dead_code)]

use proptest::prelude::*;

use smvirt::virt::{
    transfer_cycles, AllocId, AllocationOutcome, Eviction, Location, MappingTable, OversubLimits,
    Owner, VictimRank,
};
use smvirt::workload::{
    arch_preset, GpuConfig, KernelProgram, PhaseDescriptor, ResourceKind, ResourceSpec, SmemScope,
    WorkloadSpec,
};

pub fn gen_b() -> GpuConfig {
    arch_preset("gen-b").unwrap()
}

pub fn phase(insts: u32, regs: u32, smem: u32, mem_ratio: f64, barrier: bool) -> PhaseDescriptor {
    PhaseDescriptor {
        insts,
        regs,
        smem,
        mem_ratio,
        ends_with_barrier: barrier,
    }
}

pub fn kernel(name: &str, total_threads: u64, phases: Vec<PhaseDescriptor>) -> KernelProgram {
    KernelProgram {
        name: name.to_string(),
        phases,
        total_threads,
        smem_scope: SmemScope::Block,
    }
}

prop_compose! {
    /// A phase whose memory ratio is a multiple of 1/8 so that rounding is exact
    /// for most instruction counts.
    pub fn arb_phase(max_insts: u32, max_regs: u32, max_smem: u32)(
        insts in 1..=max_insts,
        regs in 0..=max_regs,
        smem in 0..=max_smem,
        eighths in 0u32..=8,
        barrier in any::<bool>(),
    ) -> PhaseDescriptor {
        phase(insts, regs, smem, f64::from(eighths) / 8.0, barrier)
    }
}

prop_compose! {
    pub fn arb_kernel(max_phases: usize, max_threads: u64)(
        phases in prop::collection::vec(arb_phase(24, 64, 4096), 1..=max_phases),
        total_threads in 1..=max_threads,
    ) -> KernelProgram {
        kernel("k", total_threads, phases)
    }
}

pub fn arb_block_size() -> impl Strategy<Value = u32> {
    prop::sample::select(vec![32u32, 64, 96, 128, 256])
}

pub fn max_blocks_brute_force(spec: &ResourceSpec, cfg: &GpuConfig) -> u32 {
    let fits = |k: u64| {
        k <= u64::from(cfg.max_resident_blocks)
            && ResourceKind::ALL
                .iter()
                .all(|&r| k * spec.block_demand(r) <= cfg.capacity(r))
    };
    let mut k = 0;
    while fits(k + 1) {
        k += 1;
    }
    k as u32
}

prop_compose! {
    pub fn arb_cfg()(
        regs in 1024u32..=131072,
        smem in 0u32..=98304,
        warps in 1u32..=64,
        cap in 1u32..=32,
    ) -> GpuConfig {
        GpuConfig {
            registers_total: regs,
            scratchpad_bytes: smem.max(1),
            thread_slots: warps * 32,
            max_resident_blocks: cap,
            ..gen_b()
        }
    }
}

prop_compose! {
    pub fn arb_spec()(warps in 1u32..=32, regs in 0u32..=255, smem in 0u32..=65536) -> ResourceSpec {
        ResourceSpec { threads_per_block: warps * 32, regs_per_thread: regs, smem_per_block: smem }
    }
}

prop_compose! {
    /// Kernels whose every block fits on gen-b at once: at most 8 blocks of
    /// at most 128 threads, 64 registers and 4 KiB per block.
    pub fn abundant()(
        phases in prop::collection::vec(arb_phase(40, 64, 4096), 1..=4),
        tpb in prop::sample::select(vec![32u32, 64, 128]),
        blocks in 1u64..=8,
    )(
        rem in 1..=u64::from(tpb),
        phases in Just(phases),
        tpb in Just(tpb),
        blocks in Just(blocks),
    ) -> WorkloadSpec {
        let threads = (blocks - 1) * u64::from(tpb) + rem;
        WorkloadSpec::declared(kernel("abundant", threads, phases), tpb)
    }
}

#[derive(Clone, Debug)]
pub enum Op {
    Acquire(u64, u32),
    Release(usize),
    Evict(u64),
    SwapIn(usize),
}

pub fn arb_op(max: u64) -> impl Strategy<Value = Op> {
    prop_oneof![
        3 => (0..=max, 0u32..8).prop_map(|(s, o)| Op::Acquire(s, o)),
        2 => any::<usize>().prop_map(Op::Release),
        1 => (0..=max).prop_map(Op::Evict),
        1 => any::<usize>().prop_map(Op::SwapIn),
    ]
}

pub fn kind_strategy() -> impl Strategy<Value = ResourceKind> {
    prop::sample::select(ResourceKind::ALL.to_vec())
}

/// Owners with an odd id count as idle at a barrier.
pub fn rank(owner: Owner) -> Option<VictimRank> {
    match owner {
        Owner::Warp(w) | Owner::Block(w) if w % 2 == 1 => Some(VictimRank {
            class: 0,
            since: u64::from(w),
        }),
        _ => None,
    }
}

pub fn run_trace(kind: ResourceKind, o: f64, ops: &[Op]) -> Result<(), TestCaseError> {
    let cfg = gen_b();
    let cap = 4096;
    let mut table = MappingTable::new(kind, cap);
    let mut limits = OversubLimits::new(2.0);
    for k in ResourceKind::ALL {
        limits.set(k, o);
    }
    let mut live: Vec<AllocId> = Vec::new();
    for op in ops {
        let before_total = table.physical_in_use() + table.swap_in_use();
        match *op {
            Op::Acquire(size, owner) => {
                let outcome = table.acquire(size, Owner::Warp(owner), &limits, &cfg);
                match outcome {
                    AllocationOutcome::Physical(id) => live.push(id),
                    AllocationOutcome::Swapped(id, stall) => {
                        prop_assert_eq!(stall, transfer_cycles(kind, size, &cfg));
                        live.push(id);
                    }
                    AllocationOutcome::Denied(_) => {
                        prop_assert_eq!(
                            table.physical_in_use() + table.swap_in_use(),
                            before_total
                        );
                    }
                }
            }
            Op::Release(i) if !live.is_empty() => {
                let id = live.remove(i % live.len());
                let size = table.get(id).unwrap().size;
                prop_assert_eq!(table.release(id).unwrap(), size);
                prop_assert!(table.release(id).is_err());
            }
            Op::Evict(needed) if needed <= table.physical_in_use() => {
                if let Eviction::Evicted { victims, .. } = table.evict(needed, &cfg, rank).unwrap()
                {
                    let moved: u64 = victims.iter().map(|v| table.get(*v).unwrap().size).sum();
                    prop_assert!(moved >= needed);
                }
                prop_assert_eq!(table.physical_in_use() + table.swap_in_use(), before_total);
            }
            Op::SwapIn(i) => {
                let swapped: Vec<AllocId> = live
                    .iter()
                    .copied()
                    .filter(|id| table.get(*id).unwrap().location == Location::Swap)
                    .collect();
                if !swapped.is_empty() {
                    let id = swapped[i % swapped.len()];
                    let entry = *table.get(id).unwrap();
                    if entry.size <= table.physical_free() {
                        let stall = table.swap_in(id, &cfg).unwrap();
                        prop_assert_eq!(stall, transfer_cycles(kind, entry.size, &cfg));
                        let after = *table.get(id).unwrap();
                        prop_assert_eq!(after.location, Location::Physical);
                        prop_assert_eq!((after.size, after.owner), (entry.size, entry.owner));
                    } else {
                        prop_assert!(table.swap_in(id, &cfg).is_err());
                    }
                    prop_assert_eq!(table.physical_in_use() + table.swap_in_use(), before_total);
                }
            }
            _ => {}
        }
        table
            .check_invariants(Some(&limits))
            .map_err(TestCaseError::fail)?;
        let total: u64 = live.iter().map(|id| table.get(*id).unwrap().size).sum();
        prop_assert_eq!(total, table.physical_in_use() + table.swap_in_use());
        prop_assert_eq!(table.len(), live.len());
    }
    Ok(())
}

pub fn limits_all(o: f64) -> OversubLimits {
    let mut l = OversubLimits::new(o);
    for k in ResourceKind::ALL {
        l.set(k, o);
    }
    l
}

/// Type-7 quantile with the fractional index kept exact in quarters.
pub fn reference_quartile(sorted: &[f64], quarters: usize) -> f64 {
    let scaled = quarters * (sorted.len() - 1);
    let (lo, rem) = (scaled / 4, scaled % 4);
    if rem == 0 {
        return sorted[lo];
    }
    let w = rem as f64 / 4.0;
    sorted[lo] * (1.0 - w) + sorted[lo + 1] * w
}

pub fn close(a: f64, b: f64) -> bool {
    a == b || (a - b).abs() <= 1e-12 * a.abs().max(b.abs())
}

pub fn reference_porting(source: &[u64], target: &[u64], margin: f64) -> f64 {
    let perf = |c: u64| 1.0 / c as f64;
    let best_s = source.iter().map(|&c| perf(c)).fold(0.0, f64::max);
    let best_t = target.iter().map(|&c| perf(c)).fold(0.0, f64::max);
    let mut worst = f64::INFINITY;
    for i in 0..source.len() {
        if perf(source[i]) >= (1.0 - margin) * best_s {
            worst = worst.min(perf(target[i]) / best_t);
        }
    }
    1.0 - worst
}

/// Compares `tukey_stats` against the reference computation; `None` when
/// every field agrees within 1e-12 relative.
pub fn tukey_mismatch(xs: &[f64]) -> Option<String> {
    let s = smvirt::metrics::tukey_stats(xs).ok()?;
    let mut sorted = xs.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    let (q1, q3) = (
        reference_quartile(&sorted, 1),
        reference_quartile(&sorted, 3),
    );
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    };
    let iqr = q3 - q1;
    let inside: Vec<f64> = sorted
        .iter()
        .copied()
        .filter(|&x| x >= q1 - 1.5 * iqr && x <= q3 + 1.5 * iqr)
        .collect();
    let lo = inside.first().copied().unwrap_or(q1).min(q1);
    let hi = inside.last().copied().unwrap_or(q3).max(q3);
    let mean = xs.iter().sum::<f64>() / n as f64;
    let scale = xs.iter().map(|x| x.abs()).fold(1.0, f64::max);
    let checks = [
        ("q1", s.q1, q1),
        ("median", s.median, median),
        ("q3", s.q3, q3),
        ("whisker_low", s.whisker_low, lo),
        ("whisker_high", s.whisker_high, hi),
        ("min", s.min, sorted[0]),
        ("max", s.max, sorted[n - 1]),
    ];
    for (name, got, want) in checks {
        if !close(got, want) {
            return Some(format!("{name}: {got} vs {want} on {xs:?}"));
        }
    }
    if (s.mean - mean).abs() > 1e-12 * scale {
        return Some(format!("mean: {} vs {mean}", s.mean));
    }
    if s.outliers.len() != n - inside.len() {
        return Some(format!(
            "{} outliers, expected {}",
            s.outliers.len(),
            n - inside.len()
        ));
    }
    None
}

/// A sweep over block sizes 32, 64, ... with the given cycle counts.
pub fn sweep_of(arch: &str, cycles: &[u64]) -> smvirt::metrics::SweepResult {
    smvirt::metrics::SweepResult {
        kernel: "k".into(),
        arch: arch.into(),
        policy: "baseline".into(),
        points: cycles
            .iter()
            .enumerate()
            .map(|(i, &c)| smvirt::metrics::SweepPoint {
                spec: ResourceSpec {
                    threads_per_block: 32 * (i as u32 + 1),
                    regs_per_thread: 16,
                    smem_per_block: 0,
                },
                total_cycles: c,
            })
            .collect(),
    }
}
