//! The adaptive runtime: admits warps at phase boundaries, buffers the ones
//! that cannot be mapped in pending queues, and sizes the virtual space of
//! each resource from epoch telemetry.
//!
//! Every grant is additionally gated by a safety check over the resident
//! blocks in launch order: after the grant, the oldest block must still be
//! able to reach its worst-case outstanding demand, then the next one once
//! the oldest has released everything, and so on. Together with the pending
//! queue serving older blocks first this keeps dynamic allocation free of
//! deadlock even when no swap space is available.

use std::collections::{btree_map::Entry, BTreeMap};

use serde::{Deserialize, Serialize};

use crate::virt::{
    transfer_cycles, AllocId, Eviction, Location, MappingTable, OversubLimits, Owner, VictimRank,
    VirtError,
};
use crate::workload::{GpuConfig, ResourceKind};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CoordinatorParams {
    /// Issue utilization below which more oversubscription is attempted.
    pub u_target: f64,
    /// Tolerated ratio of swap stall cycles to busy cycles.
    pub s_max: f64,
    /// Oversubscription factor increment.
    pub step: f64,
    /// Upper bound on any oversubscription factor; 1.0 disables swap.
    pub o_max: f64,
    pub epoch_cycles: u64,
    /// Defer grants that would move data to swap while the run's cumulative
    /// swap stall plus the transfer would exceed `s_max` of elapsed cycles.
    pub swap_budget: bool,
}

impl Default for CoordinatorParams {
    fn default() -> Self {
        CoordinatorParams {
            u_target: 0.9,
            s_max: 0.1,
            step: 0.125,
            o_max: 2.0,
            epoch_cycles: 1000,
            swap_budget: true,
        }
    }
}

impl CoordinatorParams {
    pub fn validate(&self) -> Result<(), String> {
        if self.o_max.is_nan() || self.o_max < 1.0 {
            return Err("coordinator o_max must be >= 1.0".into());
        }
        if self.step.is_nan() || self.step <= 0.0 {
            return Err("coordinator step must be > 0".into());
        }
        if self.epoch_cycles == 0 {
            return Err("coordinator epoch_cycles must be > 0".into());
        }
        if !(0.0..=1.0).contains(&self.u_target) || self.s_max.is_nan() || self.s_max < 0.0 {
            return Err("coordinator u_target must be in [0, 1] and s_max >= 0".into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpochTelemetry {
    pub issue_slots_used: u64,
    pub issue_slots_total: u64,
    pub swap_stall_cycles: u64,
    pub busy_cycles: u64,
    /// Swap stall cycles attributed to each resource.
    pub swap_stall_by_kind: [u64; 3],
}

impl EpochTelemetry {
    pub fn utilization(&self) -> f64 {
        if self.issue_slots_total == 0 {
            0.0
        } else {
            self.issue_slots_used as f64 / self.issue_slots_total as f64
        }
    }

    pub fn swap_ratio(&self) -> f64 {
        if self.busy_cycles == 0 {
            0.0
        } else {
            self.swap_stall_cycles as f64 / self.busy_cycles as f64
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PhaseAdmission {
    Proceed(u64),
    Queued,
}

/// One mapping table per resource kind.
#[derive(Clone, Debug)]
pub struct ResourceTables {
    tables: [MappingTable; 3],
}

impl ResourceTables {
    pub fn new(cfg: &GpuConfig) -> Self {
        ResourceTables {
            tables: ResourceKind::ALL.map(|k| MappingTable::for_config(k, cfg)),
        }
    }

    pub fn get(&self, kind: ResourceKind) -> &MappingTable {
        &self.tables[kind.index()]
    }

    pub fn get_mut(&mut self, kind: ResourceKind) -> &mut MappingTable {
        &mut self.tables[kind.index()]
    }

    pub fn check_invariants(&self) -> Result<(), String> {
        self.tables
            .iter()
            .try_for_each(|t| t.check_invariants(None))
    }
}

/// What the coordinator needs to know about the simulated SM.
pub trait RuntimeView {
    /// Per-resource targets of `warp` for the phase it is entering:
    /// thread slots and registers of the warp, scratchpad of its block.
    fn targets(&self, warp: u32) -> [u64; 3];

    fn block_of(&self, warp: u32) -> u32;

    /// Resident blocks, oldest first, with the largest amount of each
    /// resource the block may still hold before it completes.
    fn block_worst(&self) -> Vec<(u32, [u64; 3])>;

    /// Eviction rank of a non-runnable owner; `None` pins the owner.
    fn victim_rank(&self, owner: Owner) -> Option<VictimRank>;
}

#[derive(Clone, Debug, Default)]
struct Holding {
    ids: [Vec<AllocId>; 3],
    amount: [u64; 3],
}

#[derive(Clone, Copy, Debug)]
struct PendingEntry {
    warp: u32,
    since: u64,
}

fn owner_of(kind: ResourceKind, warp: u32, block: u32) -> Owner {
    match kind {
        ResourceKind::Scratchpad => Owner::Block(block),
        _ => Owner::Warp(warp),
    }
}

#[derive(Clone, Debug)]
pub struct Coordinator {
    params: CoordinatorParams,
    limits: OversubLimits,
    /// Keyed by (block, arrival sequence): older blocks are served first and
    /// arrival order is kept within a block.
    pending: BTreeMap<(u32, u64), PendingEntry>,
    pending_seq: u64,
    telemetry: EpochTelemetry,
    last_blocked: Option<ResourceKind>,
    holdings: BTreeMap<Owner, Holding>,
    block_owners: BTreeMap<u32, Vec<Owner>>,
    /// Bumped whenever a failed admission could start succeeding.
    generation: u64,
    head_failed_at: Option<u64>,
    elapsed: u64,
    swap_total: u64,
    /// Cumulative swap stall a deferred grant needs the budget to cover.
    budget_wait: Option<u64>,
    /// Set while the SM sits idle on a deferred grant; cleared by the next
    /// grant that moves data.
    budget_waived: bool,
}

impl Coordinator {
    pub fn new(params: CoordinatorParams) -> Self {
        Coordinator {
            params,
            limits: OversubLimits::new(params.o_max),
            pending: BTreeMap::new(),
            pending_seq: 0,
            telemetry: EpochTelemetry::default(),
            last_blocked: None,
            holdings: BTreeMap::new(),
            block_owners: BTreeMap::new(),
            generation: 0,
            head_failed_at: None,
            elapsed: 0,
            swap_total: 0,
            budget_wait: None,
            budget_waived: false,
        }
    }

    pub fn params(&self) -> &CoordinatorParams {
        &self.params
    }

    pub fn limits(&self) -> &OversubLimits {
        &self.limits
    }

    pub fn telemetry(&self) -> &EpochTelemetry {
        &self.telemetry
    }

    pub fn last_blocked(&self) -> Option<ResourceKind> {
        self.last_blocked
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    /// Pending warps in service order.
    pub fn pending_warps(&self) -> Vec<u32> {
        self.pending.values().map(|e| e.warp).collect()
    }

    /// Units of `kind` currently held by `owner`.
    pub fn held(&self, owner: Owner, kind: ResourceKind) -> u64 {
        self.holdings
            .get(&owner)
            .map_or(0, |h| h.amount[kind.index()])
    }

    /// Whether another admission attempt could succeed since the last failure.
    pub fn may_admit(&self) -> bool {
        !self.pending.is_empty() && self.head_failed_at != Some(self.generation)
    }

    fn bump(&mut self) {
        self.generation += 1;
    }

    fn budgeted(&self) -> bool {
        self.params.swap_budget && !self.budget_waived
    }

    /// Lifts the swap budget, and the on-chip safety rule that comes with
    /// it, while nothing is left to overlap a transfer with. Returns whether
    /// anything changed.
    pub fn waive_budget(&mut self) -> bool {
        if !self.budgeted() || self.pending.is_empty() {
            return false;
        }
        self.budget_wait = None;
        self.budget_waived = true;
        self.bump();
        true
    }

    /// Queues a warp that has not started yet (or cannot start its next phase).
    pub fn enqueue(&mut self, warp: u32, block: u32, now: u64) {
        self.pending_seq += 1;
        self.pending
            .insert((block, self.pending_seq), PendingEntry { warp, since: now });
        self.bump();
    }

    /// Processes `warp` crossing into its next phase. On success the warp may
    /// proceed after the returned stall; otherwise nothing changes and the
    /// warp waits in the pending queue.
    pub fn on_phase_boundary(
        &mut self,
        warp: u32,
        tables: &mut ResourceTables,
        cfg: &GpuConfig,
        view: &dyn RuntimeView,
        now: u64,
    ) -> Result<PhaseAdmission, VirtError> {
        let block = view.block_of(warp);
        match self.try_grant(warp, block, tables, cfg, view)? {
            Ok(stall) => Ok(PhaseAdmission::Proceed(stall)),
            Err(kind) => {
                self.last_blocked = Some(kind);
                self.enqueue(warp, block, now);
                Ok(PhaseAdmission::Queued)
            }
        }
    }

    /// Admits pending warps from the head of the queue until one cannot be
    /// mapped. Returns the admitted warps with their stall cycles.
    pub fn schedule_pending(
        &mut self,
        tables: &mut ResourceTables,
        cfg: &GpuConfig,
        view: &dyn RuntimeView,
    ) -> Result<Vec<(u32, u64)>, VirtError> {
        let mut admitted = Vec::new();
        if !self.may_admit() {
            return Ok(admitted);
        }
        while let Some((&key, &entry)) = self.pending.iter().next() {
            let block = key.0;
            match self.try_grant(entry.warp, block, tables, cfg, view)? {
                Ok(stall) => {
                    self.pending.remove(&key);
                    admitted.push((entry.warp, stall));
                }
                Err(kind) => {
                    self.last_blocked = Some(kind);
                    self.head_failed_at = Some(self.generation);
                    break;
                }
            }
        }
        Ok(admitted)
    }

    /// Cycle at which a pending warp was queued.
    pub fn pending_since(&self, warp: u32) -> Option<u64> {
        self.pending
            .values()
            .find(|e| e.warp == warp)
            .map(|e| e.since)
    }

    /// Releases everything a finished warp holds and trims its block's
    /// scratchpad to `block_smem_target`.
    pub fn retire_warp(
        &mut self,
        warp: u32,
        block: u32,
        block_smem_target: u64,
        tables: &mut ResourceTables,
    ) -> Result<(), VirtError> {
        if let Some(h) = self.holdings.remove(&Owner::Warp(warp)) {
            for kind in ResourceKind::ALL {
                for id in &h.ids[kind.index()] {
                    tables.get_mut(kind).release(*id)?;
                }
            }
        }
        if let Some(owners) = self.block_owners.get_mut(&block) {
            owners.retain(|o| *o != Owner::Warp(warp));
        }
        let held = self.held(Owner::Block(block), ResourceKind::Scratchpad);
        if held > block_smem_target {
            self.shrink(
                Owner::Block(block),
                ResourceKind::Scratchpad,
                held - block_smem_target,
                tables,
            )?;
        }
        self.bump();
        Ok(())
    }

    /// Drops the bookkeeping of a finished block, releasing anything left.
    pub fn retire_block(
        &mut self,
        block: u32,
        tables: &mut ResourceTables,
    ) -> Result<(), VirtError> {
        if let Some(owners) = self.block_owners.remove(&block) {
            for owner in owners {
                if let Some(h) = self.holdings.remove(&owner) {
                    for kind in ResourceKind::ALL {
                        for id in &h.ids[kind.index()] {
                            tables.get_mut(kind).release(*id)?;
                        }
                    }
                }
            }
        }
        self.bump();
        Ok(())
    }

    /// Accumulates issue-slot usage over `cycles` elapsed cycles.
    pub fn record_cycles(&mut self, cycles: u64, issued: u64, issue_width: u32) {
        self.telemetry.busy_cycles += cycles;
        self.elapsed += cycles;
        if let Some(need) = self.budget_wait {
            if self.params.s_max * self.elapsed as f64 >= need as f64 {
                self.budget_wait = None;
                self.bump();
            }
        }
        self.telemetry.issue_slots_total += cycles * u64::from(issue_width);
        self.telemetry.issue_slots_used += issued;
    }

    fn record_stall(&mut self, kind: ResourceKind, cycles: u64) {
        self.swap_total += cycles;
        self.telemetry.swap_stall_cycles += cycles;
        self.telemetry.swap_stall_by_kind[kind.index()] += cycles;
    }

    /// Closes an epoch: applies the sizing rule to the accumulated telemetry
    /// and resets it.
    pub fn end_epoch(&mut self, tables: &ResourceTables) -> OversubLimits {
        let telemetry = std::mem::take(&mut self.telemetry);
        self.update_virtual_space(&telemetry, tables)
    }

    /// Sizing rule. Grows the virtual space of the resource that last blocked
    /// an admission while warps are pending, the SM is under-utilized and swap
    /// overhead is low; shrinks the most-swapped resource when swap overhead
    /// exceeds its budget.
    pub fn update_virtual_space(
        &mut self,
        telemetry: &EpochTelemetry,
        tables: &ResourceTables,
    ) -> OversubLimits {
        let u = telemetry.utilization();
        let s = telemetry.swap_ratio();
        let before = self.limits;
        if !self.pending.is_empty() && u < self.params.u_target && s < self.params.s_max {
            if let Some(kind) = self.last_blocked {
                self.limits
                    .set(kind, self.limits.factor(kind) + self.params.step);
            }
        } else if s > self.params.s_max {
            let kind = most_swapped(telemetry, tables);
            self.limits
                .set(kind, self.limits.factor(kind) - self.params.step);
        }
        if self.limits != before {
            self.bump();
        }
        self.limits
    }

    /// Attempts to map `warp`'s next-phase demand. `Ok(Err(kind))` means the
    /// warp must wait and nothing was changed.
    fn try_grant(
        &mut self,
        warp: u32,
        block: u32,
        tables: &mut ResourceTables,
        cfg: &GpuConfig,
        view: &dyn RuntimeView,
    ) -> Result<Result<u64, ResourceKind>, VirtError> {
        let targets = view.targets(warp);
        let mut inc = [0u64; 3];
        let mut dec = [0u64; 3];
        for kind in ResourceKind::ALL {
            let held = self.held(owner_of(kind, warp, block), kind);
            let t = targets[kind.index()];
            if t > held {
                inc[kind.index()] = t - held;
            } else {
                dec[kind.index()] = held - t;
            }
        }
        for kind in ResourceKind::ALL {
            let d = inc[kind.index()];
            if d > 0 && !tables.get(kind).can_acquire(d, &self.limits) {
                return Ok(Err(kind));
            }
        }
        if let Err(kind) = self.check_safety(block, inc, inc, tables, view) {
            return Ok(Err(kind));
        }
        let rank = |o: Owner| {
            if o == Owner::Warp(warp) || o == Owner::Block(block) {
                None
            } else {
                view.victim_rank(o)
            }
        };
        // Per kind: evict only when it moves fewer bytes than placing the
        // increase itself in swap would.
        let mut evict = [false; 3];
        let mut cost = 0;
        let mut costly = None;
        for kind in ResourceKind::ALL {
            let d = inc[kind.index()];
            let table = tables.get(kind);
            let free = table.physical_free();
            if d <= free {
                continue;
            }
            let place = transfer_cycles(kind, d, cfg);
            match table.eviction_cost(d - free, cfg, rank) {
                Some(c) if c <= place => {
                    evict[kind.index()] = true;
                    cost += c;
                }
                _ => cost += place,
            }
            costly.get_or_insert(kind);
        }
        if self.budgeted() {
            let budget = (self.params.s_max * self.elapsed as f64).floor() as u64;
            if let Some(kind) = costly {
                if self.swap_total + cost > budget {
                    self.budget_wait = Some(self.swap_total + cost);
                    return Ok(Err(kind));
                }
            }
        }
        if costly.is_some() {
            self.budget_waived = false;
        }

        self.register(Owner::Warp(warp), block);
        self.register(Owner::Block(block), block);

        let mut stall = 0;
        let mut fresh = Vec::new();
        for kind in ResourceKind::ALL {
            let d = inc[kind.index()];
            if d == 0 {
                continue;
            }
            let table = tables.get_mut(kind);
            let free = table.physical_free();
            if evict[kind.index()] {
                if let Eviction::Evicted { stall: s, .. } = table.evict(d - free, cfg, rank)? {
                    self.record_stall(kind, s);
                    stall += s;
                }
            }
            let outcome = table.acquire(d, owner_of(kind, warp, block), &self.limits, cfg);
            let id = outcome.id().expect("feasibility checked before commit");
            fresh.push(id);
            self.record_stall(kind, outcome.stall());
            stall += outcome.stall();
            let h = self
                .holdings
                .get_mut(&owner_of(kind, warp, block))
                .expect("registered");
            h.ids[kind.index()].push(id);
            h.amount[kind.index()] += d;
        }
        for kind in ResourceKind::ALL {
            let d = dec[kind.index()];
            if d > 0 {
                self.shrink(owner_of(kind, warp, block), kind, d, tables)?;
            }
        }
        stall += self.resume(warp, block, &fresh, tables, cfg, view, &rank)?;
        self.bump();
        Ok(Ok(stall))
    }

    fn register(&mut self, owner: Owner, block: u32) {
        if let Entry::Vacant(e) = self.holdings.entry(owner) {
            e.insert(Holding::default());
            self.block_owners.entry(block).or_default().push(owner);
        }
    }

    /// Brings the owner's older swapped entries back on chip, evicting idle owners
    /// if needed. Entries that still do not fit stay in swap and are charged
    /// as swap accesses for this phase.
    #[allow(clippy::too_many_arguments)]
    fn resume(
        &mut self,
        warp: u32,
        block: u32,
        fresh: &[AllocId],
        tables: &mut ResourceTables,
        cfg: &GpuConfig,
        view: &dyn RuntimeView,
        rank: &dyn Fn(Owner) -> Option<VictimRank>,
    ) -> Result<u64, VirtError> {
        let mut stall = 0;
        for kind in ResourceKind::ALL {
            let owner = owner_of(kind, warp, block);
            let ids = match self.holdings.get(&owner) {
                Some(h) => h.ids[kind.index()].clone(),
                None => continue,
            };
            for id in ids {
                let entry = *tables.get(kind).get(id).ok_or(VirtError::UnknownId(id))?;
                if entry.location != Location::Swap || entry.size == 0 || fresh.contains(&id) {
                    continue;
                }
                let stay = transfer_cycles(kind, entry.size, cfg);
                let free = tables.get(kind).physical_free();
                if entry.size > free {
                    let cost = tables.get(kind).eviction_cost(entry.size - free, cfg, rank);
                    if cost.is_some_and(|c| c <= stay) {
                        if let Eviction::Evicted { stall: s, .. } =
                            tables.get_mut(kind).evict(entry.size - free, cfg, rank)?
                        {
                            self.record_stall(kind, s);
                            stall += s;
                        }
                    }
                }
                let mut on_chip = [0; 3];
                on_chip[kind.index()] = entry.size;
                let fits = entry.size <= tables.get(kind).physical_free()
                    && self
                        .check_safety(block, [0; 3], on_chip, tables, view)
                        .is_ok();
                let s = if fits {
                    tables.get_mut(kind).swap_in(id, cfg)?
                } else {
                    stay
                };
                self.record_stall(kind, s);
                stall += s;
            }
        }
        Ok(stall)
    }

    /// Returns `by` units of `owner`'s holding, swapped entries first, then
    /// the most recent physical ones.
    fn shrink(
        &mut self,
        owner: Owner,
        kind: ResourceKind,
        by: u64,
        tables: &mut ResourceTables,
    ) -> Result<(), VirtError> {
        let Some(h) = self.holdings.get_mut(&owner) else {
            return Ok(());
        };
        let table = tables.get_mut(kind);
        let ids = &mut h.ids[kind.index()];
        let mut order: Vec<usize> = (0..ids.len()).collect();
        order.sort_by_key(|&i| {
            let loc = table.get(ids[i]).map(|e| e.location);
            (loc != Some(Location::Swap), std::cmp::Reverse(i))
        });
        let mut left = by;
        for i in order {
            if left == 0 {
                break;
            }
            let size = table.get(ids[i]).ok_or(VirtError::UnknownId(ids[i]))?.size;
            let take = size.min(left);
            table.shrink(ids[i], take)?;
            left -= take;
        }
        ids.retain(|id| {
            let empty = table.get(*id).is_some_and(|e| e.size == 0);
            if empty {
                let _ = table.release(*id);
            }
            !empty
        });
        h.amount[kind.index()] -= by - left;
        self.bump();
        Ok(())
    }

    /// Per-resource (physical, total) units held by a block and its warps.
    /// (on-chip, total) units held by all owners of `block`.
    pub fn block_held(&self, block: u32, tables: &ResourceTables) -> ([u64; 3], [u64; 3]) {
        let mut phys = [0; 3];
        let mut total = [0; 3];
        for owner in self.block_owners.get(&block).into_iter().flatten() {
            let Some(h) = self.holdings.get(owner) else {
                continue;
            };
            for kind in ResourceKind::ALL {
                for id in &h.ids[kind.index()] {
                    if let Some(e) = tables.get(kind).get(*id) {
                        total[kind.index()] += e.size;
                        if e.location == Location::Physical {
                            phys[kind.index()] += e.size;
                        }
                    }
                }
            }
        }
        (phys, total)
    }

    /// Ordered-completion check: with `inc` more held by `block`, `inc_phys`
    /// of it on chip, every resident block must be able to reach its
    /// worst-case demand in launch order.
    fn check_safety(
        &self,
        block: u32,
        inc: [u64; 3],
        inc_phys: [u64; 3],
        tables: &ResourceTables,
        view: &dyn RuntimeView,
    ) -> Result<(), ResourceKind> {
        let mut phys_free = [0u64; 3];
        let mut room = [0u64; 3];
        for kind in ResourceKind::ALL {
            let t = tables.get(kind);
            let i = kind.index();
            phys_free[i] = t.physical_free().saturating_sub(inc_phys[i]);
            room[i] = t.virtual_room(&self.limits).saturating_sub(inc[i]);
        }
        for (b, worst) in view.block_worst() {
            let (mut phys, mut total) = self.block_held(b, tables);
            if b == block {
                for i in 0..3 {
                    phys[i] += inc_phys[i];
                    total[i] += inc[i];
                }
            }
            for kind in ResourceKind::ALL {
                let i = kind.index();
                // Under a swap budget the chain must close on chip alone, since
                // the swap grants it would lean on can be deferred. Swapped
                // holdings then count as still needed.
                let (need, avail) = if self.budgeted() {
                    (worst[i].saturating_sub(phys[i]), phys_free[i])
                } else {
                    (worst[i].saturating_sub(total[i]), phys_free[i].max(room[i]))
                };
                if need > avail {
                    return Err(kind);
                }
            }
            for i in 0..3 {
                phys_free[i] += phys[i];
                room[i] += total[i];
            }
        }
        Ok(())
    }
}

/// The resource with the largest swap occupancy relative to its capacity;
/// ties and empty swap fall back to the largest epoch swap stall.
fn most_swapped(telemetry: &EpochTelemetry, tables: &ResourceTables) -> ResourceKind {
    let mut best = ResourceKind::ThreadSlots;
    let mut best_key = (-1.0f64, 0u64);
    for kind in ResourceKind::ALL {
        let t = tables.get(kind);
        let frac = if t.capacity_physical() == 0 {
            0.0
        } else {
            t.swap_in_use() as f64 / t.capacity_physical() as f64
        };
        let key = (frac, telemetry.swap_stall_by_kind[kind.index()]);
        if key.0 > best_key.0 || (key.0 == best_key.0 && key.1 > best_key.1) {
            best = kind;
            best_key = key;
        }
    }
    best
}
