//! Resource mapping tables: every virtual allocation lives either in the
//! physical on-chip space or in the swap space in main memory.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::workload::{GpuConfig, ResourceKind};

/// A swapped thread slot stores the warp context; moving it costs this many
/// chunk transfers regardless of its size.
pub const CONTEXT_SWAP_CHUNKS: u64 = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AllocId(pub u64);

/// Who holds an allocation. Registers and thread slots belong to warps,
/// scratchpad to blocks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Owner {
    Warp(u32),
    Block(u32),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Location {
    Physical,
    Swap,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Entry {
    pub location: Location,
    pub size: u64,
    pub owner: Owner,
    /// Allocation order, used for oldest-first victim selection.
    pub seq: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DenyReason {
    VirtualSpaceExhausted,
    /// Eviction could not find enough non-runnable victims.
    NoEvictableVictims,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AllocationOutcome {
    Physical(AllocId),
    /// Placed in swap; the owner pays `stall` cycles to reach it.
    Swapped(AllocId, u64),
    Denied(DenyReason),
}

impl AllocationOutcome {
    pub fn id(self) -> Option<AllocId> {
        match self {
            AllocationOutcome::Physical(id) | AllocationOutcome::Swapped(id, _) => Some(id),
            AllocationOutcome::Denied(_) => None,
        }
    }

    pub fn stall(self) -> u64 {
        match self {
            AllocationOutcome::Swapped(_, s) => s,
            _ => 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, thiserror::Error)]
pub enum VirtError {
    #[error("allocation {0:?} is not live")]
    UnknownId(AllocId),
    #[error("allocation {0:?} is not in swap")]
    NotSwapped(AllocId),
    #[error("swap-in of {needed} units with only {free} physical units free")]
    InsufficientPhysical { needed: u64, free: u64 },
    #[error("cannot shrink allocation {id:?} of size {size} by {by}")]
    ShrinkTooLarge { id: AllocId, size: u64, by: u64 },
    #[error("eviction of {needed} units exceeds {in_use} physical units in use")]
    EvictionExceedsUsage { needed: u64, in_use: u64 },
}

/// Per-resource oversubscription factors: virtual capacity is
/// `factor * physical capacity`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OversubLimits {
    factors: [f64; 3],
    max: f64,
}

impl OversubLimits {
    /// All factors start at 1.0 (no oversubscription).
    pub fn new(max: f64) -> Self {
        assert!(max >= 1.0, "maximum oversubscription factor must be >= 1.0");
        OversubLimits {
            factors: [1.0; 3],
            max,
        }
    }

    pub fn max(&self) -> f64 {
        self.max
    }

    pub fn factor(&self, kind: ResourceKind) -> f64 {
        self.factors[kind.index()]
    }

    /// Sets a factor, clamped to `[1.0, max]`.
    pub fn set(&mut self, kind: ResourceKind, value: f64) {
        self.factors[kind.index()] = value.clamp(1.0, self.max);
    }

    pub fn virtual_capacity(&self, kind: ResourceKind, physical: u64) -> u64 {
        (self.factor(kind) * physical as f64).floor() as u64
    }
}

/// Cycles to move `size` units of `kind` between physical and swap space.
pub fn transfer_cycles(kind: ResourceKind, size: u64, cfg: &GpuConfig) -> u64 {
    if size == 0 {
        return 0;
    }
    let chunks = match kind {
        ResourceKind::ThreadSlots => CONTEXT_SWAP_CHUNKS,
        ResourceKind::Registers => size.div_ceil(u64::from(cfg.reg_chunk)),
        ResourceKind::Scratchpad => size.div_ceil(u64::from(cfg.smem_chunk)),
    };
    chunks * u64::from(cfg.swap_latency)
}

/// Eviction priority of an owner; lower sorts first. Owners without a rank
/// are runnable and pinned in physical space.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct VictimRank {
    /// 0 = waiting at a barrier, 1 = idle awaiting admission.
    pub class: u8,
    /// Cycle the owner became non-runnable (earlier = idle longer).
    pub since: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Eviction {
    Evicted { victims: Vec<AllocId>, stall: u64 },
    Denied,
}

/// Mapping table for one resource kind.
#[derive(Clone, Debug)]
pub struct MappingTable {
    kind: ResourceKind,
    capacity_physical: u64,
    entries: BTreeMap<AllocId, Entry>,
    physical_in_use: u64,
    swap_in_use: u64,
    next_id: u64,
}

impl MappingTable {
    pub fn new(kind: ResourceKind, capacity_physical: u64) -> Self {
        MappingTable {
            kind,
            capacity_physical,
            entries: BTreeMap::new(),
            physical_in_use: 0,
            swap_in_use: 0,
            next_id: 0,
        }
    }

    pub fn for_config(kind: ResourceKind, cfg: &GpuConfig) -> Self {
        Self::new(kind, cfg.capacity(kind))
    }

    pub fn kind(&self) -> ResourceKind {
        self.kind
    }

    pub fn capacity_physical(&self) -> u64 {
        self.capacity_physical
    }

    pub fn physical_in_use(&self) -> u64 {
        self.physical_in_use
    }

    pub fn swap_in_use(&self) -> u64 {
        self.swap_in_use
    }

    pub fn physical_free(&self) -> u64 {
        self.capacity_physical - self.physical_in_use
    }

    /// Units that may still be placed without exceeding the virtual capacity.
    pub fn virtual_room(&self, limits: &OversubLimits) -> u64 {
        limits
            .virtual_capacity(self.kind, self.capacity_physical)
            .saturating_sub(self.physical_in_use + self.swap_in_use)
    }

    /// Whether `size` more units could be acquired right now.
    pub fn can_acquire(&self, size: u64, limits: &OversubLimits) -> bool {
        size <= self.virtual_room(limits)
    }

    pub fn get(&self, id: AllocId) -> Option<&Entry> {
        self.entries.get(&id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = (AllocId, &Entry)> {
        self.entries.iter().map(|(id, e)| (*id, e))
    }

    fn insert(&mut self, size: u64, owner: Owner, location: Location) -> AllocId {
        let id = AllocId(self.next_id);
        self.next_id += 1;
        self.entries.insert(
            id,
            Entry {
                location,
                size,
                owner,
                seq: id.0,
            },
        );
        match location {
            Location::Physical => self.physical_in_use += size,
            Location::Swap => self.swap_in_use += size,
        }
        id
    }

    /// Places a new allocation within the virtual capacity: physical if it
    /// fits, otherwise in swap.
    pub fn acquire(
        &mut self,
        size: u64,
        owner: Owner,
        limits: &OversubLimits,
        cfg: &GpuConfig,
    ) -> AllocationOutcome {
        if size > self.virtual_room(limits) {
            return AllocationOutcome::Denied(DenyReason::VirtualSpaceExhausted);
        }
        if size <= self.physical_free() {
            return AllocationOutcome::Physical(self.insert(size, owner, Location::Physical));
        }
        let stall = transfer_cycles(self.kind, size, cfg);
        AllocationOutcome::Swapped(self.insert(size, owner, Location::Swap), stall)
    }

    /// Frees an allocation, returning its size.
    pub fn release(&mut self, id: AllocId) -> Result<u64, VirtError> {
        let entry = self.entries.remove(&id).ok_or(VirtError::UnknownId(id))?;
        match entry.location {
            Location::Physical => self.physical_in_use -= entry.size,
            Location::Swap => self.swap_in_use -= entry.size,
        }
        Ok(entry.size)
    }

    /// Reduces an allocation in place, returning the freed units.
    pub fn shrink(&mut self, id: AllocId, by: u64) -> Result<u64, VirtError> {
        let entry = self.entries.get_mut(&id).ok_or(VirtError::UnknownId(id))?;
        if by > entry.size {
            return Err(VirtError::ShrinkTooLarge {
                id,
                size: entry.size,
                by,
            });
        }
        entry.size -= by;
        match entry.location {
            Location::Physical => self.physical_in_use -= by,
            Location::Swap => self.swap_in_use -= by,
        }
        Ok(by)
    }

    /// Moves a swapped allocation into physical space and returns the
    /// transfer stall. The caller must have made room first.
    pub fn swap_in(&mut self, id: AllocId, cfg: &GpuConfig) -> Result<u64, VirtError> {
        let free = self.physical_free();
        let entry = self.entries.get_mut(&id).ok_or(VirtError::UnknownId(id))?;
        if entry.location != Location::Swap {
            return Err(VirtError::NotSwapped(id));
        }
        if entry.size > free {
            return Err(VirtError::InsufficientPhysical {
                needed: entry.size,
                free,
            });
        }
        entry.location = Location::Physical;
        let size = entry.size;
        self.swap_in_use -= size;
        self.physical_in_use += size;
        Ok(transfer_cycles(self.kind, size, cfg))
    }

    /// Moves whole physical entries of non-runnable owners to swap until at
    /// least `needed` units are freed. Victims are taken by rank (barrier
    /// waiters, then longest idle) and oldest allocation first. Nothing moves
    /// when not enough victims exist.
    pub fn evict(
        &mut self,
        needed: u64,
        cfg: &GpuConfig,
        rank: impl Fn(Owner) -> Option<VictimRank>,
    ) -> Result<Eviction, VirtError> {
        if needed > self.physical_in_use {
            return Err(VirtError::EvictionExceedsUsage {
                needed,
                in_use: self.physical_in_use,
            });
        }
        if needed == 0 {
            return Ok(Eviction::Evicted {
                victims: Vec::new(),
                stall: 0,
            });
        }
        let Some(chosen) = self.select_victims(needed, &rank) else {
            return Ok(Eviction::Denied);
        };
        let mut stall = 0;
        for id in &chosen {
            let entry = self.entries.get_mut(id).expect("victim is live");
            entry.location = Location::Swap;
            self.physical_in_use -= entry.size;
            self.swap_in_use += entry.size;
            stall += transfer_cycles(self.kind, entry.size, cfg);
        }
        Ok(Eviction::Evicted {
            victims: chosen,
            stall,
        })
    }

    /// Transfer cost `evict` would charge for `needed` units, without moving
    /// anything. `None` when eviction would be denied.
    pub fn eviction_cost(
        &self,
        needed: u64,
        cfg: &GpuConfig,
        rank: impl Fn(Owner) -> Option<VictimRank>,
    ) -> Option<u64> {
        if needed > self.physical_in_use {
            return None;
        }
        let chosen = self.select_victims(needed, &rank)?;
        Some(
            chosen
                .iter()
                .map(|id| transfer_cycles(self.kind, self.entries[id].size, cfg))
                .sum(),
        )
    }

    fn select_victims(
        &self,
        needed: u64,
        rank: &impl Fn(Owner) -> Option<VictimRank>,
    ) -> Option<Vec<AllocId>> {
        let mut candidates: Vec<(VictimRank, u64, AllocId, u64)> = self
            .entries
            .iter()
            .filter(|(_, e)| e.location == Location::Physical && e.size > 0)
            .filter_map(|(id, e)| rank(e.owner).map(|r| (r, e.seq, *id, e.size)))
            .collect();
        candidates.sort_unstable();
        let mut freed = 0;
        let mut chosen = Vec::new();
        for (_, _, id, size) in candidates {
            if freed >= needed {
                break;
            }
            freed += size;
            chosen.push(id);
        }
        (freed >= needed).then_some(chosen)
    }

    /// Checks the conservation invariants, optionally against a virtual bound.
    pub fn check_invariants(&self, limits: Option<&OversubLimits>) -> Result<(), String> {
        let (mut phys, mut swap) = (0, 0);
        for e in self.entries.values() {
            match e.location {
                Location::Physical => phys += e.size,
                Location::Swap => swap += e.size,
            }
        }
        if phys != self.physical_in_use {
            return Err(format!(
                "{}: physical_in_use {} != sum of physical entries {}",
                self.kind, self.physical_in_use, phys
            ));
        }
        if swap != self.swap_in_use {
            return Err(format!(
                "{}: swap_in_use {} != sum of swap entries {}",
                self.kind, self.swap_in_use, swap
            ));
        }
        if self.physical_in_use > self.capacity_physical {
            return Err(format!(
                "{}: physical_in_use {} exceeds capacity {}",
                self.kind, self.physical_in_use, self.capacity_physical
            ));
        }
        if let Some(limits) = limits {
            let virt = limits.virtual_capacity(self.kind, self.capacity_physical);
            if phys + swap > virt {
                return Err(format!(
                    "{}: in use {} exceeds virtual capacity {}",
                    self.kind,
                    phys + swap,
                    virt
                ));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::arch_preset;

    fn cfg() -> GpuConfig {
        arch_preset("gen-b").unwrap()
    }

    fn limits(factor: f64) -> OversubLimits {
        let mut l = OversubLimits::new(2.0);
        for k in ResourceKind::ALL {
            l.set(k, factor);
        }
        l
    }

    #[test]
    fn fits_physically() {
        let mut t = MappingTable::new(ResourceKind::Scratchpad, 8192);
        let out = t.acquire(4224, Owner::Block(0), &limits(1.0), &cfg());
        assert!(matches!(out, AllocationOutcome::Physical(_)));
        assert_eq!(t.physical_in_use(), 4224);
    }

    #[test]
    fn overflow_goes_to_swap_with_chunk_stall() {
        let cfg = GpuConfig {
            smem_chunk: 128,
            swap_latency: 400,
            ..cfg()
        };
        let mut t = MappingTable::new(ResourceKind::Scratchpad, 8192);
        t.acquire(8192, Owner::Block(0), &limits(1.5), &cfg);
        let out = t.acquire(1024, Owner::Block(1), &limits(1.5), &cfg);
        // independent recomputation: 1024 / 128 = 8 chunks
        let expected = (1024 / 128) * 400;
        assert_eq!(expected, 3200);
        assert!(matches!(out, AllocationOutcome::Swapped(_, 3200)));
        assert_eq!(t.swap_in_use(), 1024);
        t.check_invariants(Some(&limits(1.5))).unwrap();
    }

    #[test]
    fn no_oversubscription_denies() {
        let mut t = MappingTable::new(ResourceKind::Scratchpad, 8192);
        t.acquire(8192, Owner::Block(0), &limits(1.0), &cfg());
        let out = t.acquire(1, Owner::Block(1), &limits(1.0), &cfg());
        assert_eq!(
            out,
            AllocationOutcome::Denied(DenyReason::VirtualSpaceExhausted)
        );
    }

    #[test]
    fn zero_size_is_physical() {
        let mut t = MappingTable::new(ResourceKind::Registers, 0);
        let out = t.acquire(0, Owner::Warp(0), &limits(1.0), &cfg());
        assert!(matches!(out, AllocationOutcome::Physical(_)));
        assert_eq!(t.len(), 1);
    }

    #[test]
    fn release_conserves_counters() {
        let l = limits(2.0);
        let mut t = MappingTable::new(ResourceKind::Scratchpad, 4224);
        let a = t.acquire(4224, Owner::Block(0), &l, &cfg()).id().unwrap();
        let b = t.acquire(512, Owner::Block(1), &l, &cfg()).id().unwrap();
        assert_eq!(t.swap_in_use(), 512);
        assert_eq!(t.release(a), Ok(4224));
        assert_eq!(t.physical_in_use(), 0);
        assert_eq!(t.release(b), Ok(512));
        assert_eq!(t.swap_in_use(), 0);
        assert_eq!(t.release(b), Err(VirtError::UnknownId(b)));
    }

    #[test]
    fn swap_in_relocates_and_charges() {
        let cfg = GpuConfig {
            reg_chunk: 64,
            swap_latency: 400,
            ..cfg()
        };
        let l = limits(2.0);
        let mut t = MappingTable::new(ResourceKind::Registers, 256);
        let hog = t.acquire(256, Owner::Warp(0), &l, &cfg).id().unwrap();
        let id = t.acquire(256, Owner::Warp(1), &l, &cfg).id().unwrap();
        assert_eq!(
            t.swap_in(id, &cfg),
            Err(VirtError::InsufficientPhysical {
                needed: 256,
                free: 0
            })
        );
        t.release(hog).unwrap();
        assert_eq!(t.swap_in(id, &cfg), Ok(4 * 400));
        let e = t.get(id).unwrap();
        assert_eq!(e.location, Location::Physical);
        assert_eq!((e.size, e.owner), (256, Owner::Warp(1)));
        assert_eq!(t.swap_in(id, &cfg), Err(VirtError::NotSwapped(id)));
    }

    #[test]
    fn zero_size_swap_in_is_free() {
        let l = limits(2.0);
        let mut t = MappingTable::new(ResourceKind::Registers, 64);
        t.acquire(64, Owner::Warp(0), &l, &cfg());
        let z = t.insert(0, Owner::Warp(1), Location::Swap);
        assert_eq!(t.swap_in(z, &cfg()), Ok(0));
    }

    #[test]
    fn evicts_barrier_waiter_whole_entry() {
        let cfg = cfg();
        let l = limits(2.0);
        let mut t = MappingTable::new(ResourceKind::Scratchpad, 4096);
        let runner = t.acquire(2048, Owner::Block(0), &l, &cfg).id().unwrap();
        let waiter = t.acquire(2048, Owner::Block(1), &l, &cfg).id().unwrap();
        let rank = |o: Owner| match o {
            Owner::Block(1) => Some(VictimRank { class: 0, since: 0 }),
            _ => None,
        };
        let ev = t.evict(1024, &cfg, rank).unwrap();
        assert_eq!(
            ev,
            Eviction::Evicted {
                victims: vec![waiter],
                stall: transfer_cycles(ResourceKind::Scratchpad, 2048, &cfg),
            }
        );
        assert_eq!(t.get(waiter).unwrap().location, Location::Swap);
        assert_eq!(t.get(runner).unwrap().location, Location::Physical);
        assert_eq!((t.physical_in_use(), t.swap_in_use()), (2048, 2048));
    }

    #[test]
    fn eviction_prefers_class_then_age() {
        let cfg = cfg();
        let l = limits(2.0);
        let mut t = MappingTable::new(ResourceKind::Registers, 4096);
        let idle_old = t.acquire(1024, Owner::Warp(0), &l, &cfg).id().unwrap();
        let barrier = t.acquire(1024, Owner::Warp(1), &l, &cfg).id().unwrap();
        let idle_new = t.acquire(1024, Owner::Warp(2), &l, &cfg).id().unwrap();
        let rank = |o: Owner| match o {
            Owner::Warp(0) => Some(VictimRank { class: 1, since: 5 }),
            Owner::Warp(1) => Some(VictimRank { class: 0, since: 9 }),
            Owner::Warp(2) => Some(VictimRank { class: 1, since: 7 }),
            _ => None,
        };
        match t.evict(2048, &cfg, rank).unwrap() {
            Eviction::Evicted { victims, .. } => assert_eq!(victims, vec![barrier, idle_old]),
            Eviction::Denied => panic!("denied"),
        }
        assert_eq!(t.get(idle_new).unwrap().location, Location::Physical);
    }

    #[test]
    fn eviction_edge_cases() {
        let cfg = cfg();
        let l = limits(2.0);
        let mut t = MappingTable::new(ResourceKind::Registers, 4096);
        t.acquire(2048, Owner::Warp(0), &l, &cfg);
        assert_eq!(
            t.evict(0, &cfg, |_| None).unwrap(),
            Eviction::Evicted {
                victims: vec![],
                stall: 0
            }
        );
        assert_eq!(t.evict(1024, &cfg, |_| None).unwrap(), Eviction::Denied);
        assert_eq!(t.physical_in_use(), 2048);
        assert!(t.evict(4096, &cfg, |_| None).is_err());
    }

    #[test]
    fn shrink_keeps_location() {
        let l = limits(1.0);
        let mut t = MappingTable::new(ResourceKind::Scratchpad, 8192);
        let id = t.acquire(4224, Owner::Block(0), &l, &cfg()).id().unwrap();
        assert_eq!(t.shrink(id, 3840), Ok(3840));
        assert_eq!(t.physical_in_use(), 384);
        assert!(t.shrink(id, 385).is_err());
        t.check_invariants(Some(&l)).unwrap();
    }

    #[test]
    fn limits_clamp() {
        let mut l = OversubLimits::new(2.0);
        l.set(ResourceKind::Registers, 3.0);
        assert_eq!(l.factor(ResourceKind::Registers), 2.0);
        l.set(ResourceKind::Registers, 0.5);
        assert_eq!(l.factor(ResourceKind::Registers), 1.0);
        l.set(ResourceKind::Scratchpad, 1.25);
        assert_eq!(l.virtual_capacity(ResourceKind::Scratchpad, 49152), 61440);
    }

    #[test]
    fn thread_slot_context_swap_is_fixed() {
        let cfg = cfg();
        assert_eq!(
            transfer_cycles(ResourceKind::ThreadSlots, 32, &cfg),
            CONTEXT_SWAP_CHUNKS * u64::from(cfg.swap_latency)
        );
        assert_eq!(transfer_cycles(ResourceKind::ThreadSlots, 0, &cfg), 0);
    }
}
