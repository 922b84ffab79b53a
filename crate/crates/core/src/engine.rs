//! Cycle-level simulation of one SM running a phase-annotated kernel.
//!
//! Each cycle runs, in order: admission, issue (round-robin by warp id over
//! Ready warps, one instruction per warp), expiry of memory and swap stalls,
//! phase completion with barrier rendezvous, and release of finished blocks.
//! Cycles in which no warp can issue and no state can change are skipped.

use serde::{Deserialize, Serialize};

use crate::coordinator::{Coordinator, CoordinatorParams, ResourceTables, RuntimeView};
use crate::error::{Error, Result};
use crate::occupancy::{max_resident_blocks, wlm_admit, AdmissionRequest, SmOccupancyState};
use crate::virt::{Owner, VictimRank};
use crate::workload::{
    declared_spec, GpuConfig, KernelProgram, PhaseDescriptor, ResourceKind, WorkloadSpec,
};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum PolicyKind {
    Baseline,
    Wlm,
    Zorua(CoordinatorParams),
}

impl PolicyKind {
    pub fn name(&self) -> &'static str {
        match self {
            PolicyKind::Baseline => "baseline",
            PolicyKind::Wlm => "wlm",
            PolicyKind::Zorua(_) => "zorua",
        }
    }

    /// Parses a policy name; Zorua takes the given coordinator parameters.
    pub fn from_name(name: &str, params: CoordinatorParams) -> Result<Self> {
        match name {
            "baseline" => Ok(PolicyKind::Baseline),
            "wlm" => Ok(PolicyKind::Wlm),
            "zorua" => Ok(PolicyKind::Zorua(params)),
            other => Err(Error::invalid(format!(
                "unknown policy `{other}` (expected baseline, wlm or zorua)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WarpStatus {
    Ready,
    MemBlocked(u64),
    SwapStalled(u64),
    AtBarrier,
    /// Not yet admitted, or waiting for its next phase to be mapped.
    PendingAdmission,
    Finished,
}

#[derive(Clone, Debug)]
pub struct WarpState {
    pub block: u32,
    pub phase: usize,
    pub issued: u32,
    pub status: WarpStatus,
    /// Whether the warp holds resources for `phase`.
    held: bool,
    /// Index of the next memory position in the current phase.
    mem_cursor: usize,
    /// Cycle the warp last became non-runnable.
    since: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub total_cycles: u64,
    pub instructions_issued: u64,
    /// Issued instructions over available issue slots.
    pub issue_util: f64,
    pub swap_stall_cycles: u64,
    pub peak_resident_warps: u32,
    /// Warps holding resources after the first cycle's admission.
    pub initial_resident_warps: u32,
    /// Indexed by resource kind.
    pub peak_physical: [u64; 3],
    pub peak_swap: [u64; 3],
    /// Oversubscription factors when the run ended (Zorua only).
    pub final_limits: Option<[f64; 3]>,
}

/// Cycles a lone warp needs for `phase` with a single issue slot.
pub fn warp_phase_cycles(phase: &PhaseDescriptor, cfg: &GpuConfig) -> u64 {
    u64::from(phase.insts) + u64::from(phase.mem_ops()) * u64::from(cfg.mem_latency)
}

/// Hooks for tests and tracing.
pub trait Observer {
    fn issue(&mut self, _cycle: u64, _warp: u32, _block: u32, _phase: usize, _inst: u32) {}

    /// Called after every simulated cycle; `tables` is present under Zorua.
    fn cycle_end(&mut self, _cycle: u64, _warps: &[WarpState], _tables: Option<&ResourceTables>) {}
}

struct NoObserver;

impl Observer for NoObserver {}

pub fn simulate(workload: &WorkloadSpec, cfg: &GpuConfig, policy: PolicyKind) -> Result<SimResult> {
    simulate_observed(workload, cfg, policy, &mut NoObserver)
}

pub fn simulate_observed(
    workload: &WorkloadSpec,
    cfg: &GpuConfig,
    policy: PolicyKind,
    observer: &mut dyn Observer,
) -> Result<SimResult> {
    cfg.validate()?;
    workload.validate(cfg.warp_size)?;
    let mut sim = Sim::new(workload, cfg, policy)?;
    sim.run(observer)
}

#[derive(Clone, Debug, Default)]
struct BlockState {
    unfinished: u32,
    at_barrier: u32,
}

/// Warp and block state, shared with the coordinator through [`RuntimeView`].
struct World<'a> {
    kernel: &'a KernelProgram,
    warp_size: u64,
    warps_per_block: u32,
    warps: Vec<WarpState>,
    blocks: Vec<BlockState>,
    /// Launched blocks not yet done, oldest first.
    resident_blocks: Vec<u32>,
    phase_regs: Vec<u64>,
    phase_smem: Vec<u64>,
    regs_suffix: Vec<u64>,
    smem_suffix: Vec<u64>,
}

impl World<'_> {
    fn block_warps(&self, block: u32) -> std::ops::Range<usize> {
        let start = (block * self.warps_per_block) as usize;
        start..(start + self.warps_per_block as usize).min(self.warps.len())
    }

    /// Largest demand block `b` can still reach from where its warps stand.
    fn worst_of(&self, b: u32) -> [u64; 3] {
        let mut worst = [0u64; 3];
        for w in self.block_warps(b).map(|i| &self.warps[i]) {
            if w.status == WarpStatus::Finished {
                continue;
            }
            let from = if w.held { w.phase } else { 0 };
            worst[0] += self.warp_size;
            worst[1] += self.warp_size * self.regs_suffix[from];
            worst[2] = worst[2].max(self.smem_suffix[from]);
        }
        worst
    }

    fn request_phase(&self, w: &WarpState) -> usize {
        if w.held {
            w.phase + 1
        } else {
            0
        }
    }

    /// Largest current-phase scratchpad among the block's holders, skipping `except`.
    fn holder_smem(&self, block: u32, except: Option<usize>) -> u64 {
        self.block_warps(block)
            .filter(|&i| Some(i) != except)
            .map(|i| &self.warps[i])
            .filter(|w| w.held && w.status != WarpStatus::Finished)
            .map(|w| self.phase_smem[w.phase])
            .max()
            .unwrap_or(0)
    }
}

impl RuntimeView for World<'_> {
    fn targets(&self, warp: u32) -> [u64; 3] {
        let w = &self.warps[warp as usize];
        let p = self.request_phase(w);
        let smem = self
            .holder_smem(w.block, Some(warp as usize))
            .max(self.phase_smem[p]);
        [self.warp_size, self.warp_size * self.phase_regs[p], smem]
    }

    fn block_of(&self, warp: u32) -> u32 {
        self.warps[warp as usize].block
    }

    fn block_worst(&self) -> Vec<(u32, [u64; 3])> {
        self.resident_blocks
            .iter()
            .map(|&b| (b, self.worst_of(b)))
            .collect()
    }

    fn victim_rank(&self, owner: Owner) -> Option<VictimRank> {
        let rank = |w: &WarpState| match w.status {
            WarpStatus::AtBarrier => Some(VictimRank {
                class: 0,
                since: w.since,
            }),
            WarpStatus::PendingAdmission if w.held => Some(VictimRank {
                class: 1,
                since: w.since,
            }),
            _ => None,
        };
        match owner {
            Owner::Warp(id) => rank(&self.warps[id as usize]),
            Owner::Block(b) => {
                let mut out: Option<VictimRank> = None;
                for w in self.block_warps(b).map(|i| &self.warps[i]) {
                    if !w.held || w.status == WarpStatus::Finished {
                        continue;
                    }
                    let r = rank(w)?;
                    out = Some(out.map_or(r, |o| o.max(r)));
                }
                out
            }
        }
    }
}

enum PolicyState {
    Baseline {
        limit: u32,
        resident: u32,
    },
    Wlm {
        state: SmOccupancyState,
        /// Next warp to admit, in launch order.
        next_warp: u32,
    },
    Zorua {
        coord: Box<Coordinator>,
        tables: ResourceTables,
        next_epoch: u64,
        idle_epochs: u32,
    },
}

struct Sim<'a> {
    cfg: &'a GpuConfig,
    workload: &'a WorkloadSpec,
    world: World<'a>,
    policy: PolicyState,
    num_blocks: u32,
    next_block: u32,
    /// Launched, unfinished warps in id order.
    live: Vec<u32>,
    mem_positions: Vec<Vec<u32>>,
    rr: u32,
    now: u64,
    progress: bool,
    result: SimResult,
}

impl<'a> Sim<'a> {
    fn new(workload: &'a WorkloadSpec, cfg: &'a GpuConfig, policy: PolicyKind) -> Result<Self> {
        let kernel = &workload.kernel;
        let tpb = workload.spec.threads_per_block;
        let wpb = workload.spec.warps_per_block(cfg.warp_size);
        let num_blocks =
            u32::try_from(workload.num_blocks()).map_err(|_| Error::invalid("too many blocks"))?;
        // the last block only carries the remaining threads
        let total_warps = kernel.total_threads.div_ceil(u64::from(cfg.warp_size)) as usize;

        let policy = match policy {
            PolicyKind::Baseline | PolicyKind::Wlm => {
                let limit = max_resident_blocks(&workload.spec, cfg);
                if limit == 0 {
                    return Err(Error::Unschedulable(format!(
                        "{} does not fit one block",
                        workload.spec
                    )));
                }
                if matches!(policy, PolicyKind::Baseline) {
                    PolicyState::Baseline { limit, resident: 0 }
                } else {
                    PolicyState::Wlm {
                        state: SmOccupancyState::new(cfg),
                        next_warp: 0,
                    }
                }
            }
            PolicyKind::Zorua(params) => {
                params.validate().map_err(Error::Invalid)?;
                let declared = declared_spec(kernel, tpb);
                for kind in ResourceKind::ALL {
                    let virt = (params.o_max * cfg.capacity(kind) as f64).floor() as u64;
                    if declared.block_demand(kind) > virt {
                        return Err(Error::ExceedsVirtualCapacity(format!(
                            "{kind} demand {} of one block exceeds {virt}",
                            declared.block_demand(kind)
                        )));
                    }
                }
                PolicyState::Zorua {
                    coord: Box::new(Coordinator::new(params)),
                    tables: ResourceTables::new(cfg),
                    next_epoch: params.epoch_cycles,
                    idle_epochs: 0,
                }
            }
        };

        let phase_regs: Vec<u64> = kernel.phases.iter().map(|p| u64::from(p.regs)).collect();
        let phase_smem: Vec<u64> = kernel
            .phases
            .iter()
            .map(|p| u64::from(kernel.block_smem(p, tpb)))
            .collect();
        let suffix_max = |v: &[u64]| {
            let mut out = v.to_vec();
            for i in (0..out.len().saturating_sub(1)).rev() {
                out[i] = out[i].max(out[i + 1]);
            }
            out
        };
        let world = World {
            kernel,
            warp_size: u64::from(cfg.warp_size),
            warps_per_block: wpb,
            warps: (0..total_warps)
                .map(|i| WarpState {
                    block: (i / wpb as usize) as u32,
                    phase: 0,
                    issued: 0,
                    status: WarpStatus::PendingAdmission,
                    held: false,
                    mem_cursor: 0,
                    since: 0,
                })
                .collect(),
            blocks: vec![BlockState::default(); num_blocks as usize],
            resident_blocks: Vec::new(),
            regs_suffix: suffix_max(&phase_regs),
            smem_suffix: suffix_max(&phase_smem),
            phase_regs,
            phase_smem,
        };
        Ok(Sim {
            cfg,
            workload,
            world,
            policy,
            num_blocks,
            next_block: 0,
            live: Vec::new(),
            mem_positions: kernel.phases.iter().map(|p| p.mem_positions()).collect(),
            rr: 0,
            now: 0,
            progress: false,
            result: SimResult::default(),
        })
    }

    fn launch_block(&mut self) -> u32 {
        let b = self.next_block;
        self.next_block += 1;
        self.world.blocks[b as usize] = BlockState {
            unfinished: self.world.block_warps(b).len() as u32,
            at_barrier: 0,
        };
        self.world.resident_blocks.push(b);
        for i in self.world.block_warps(b) {
            self.live.push(i as u32);
        }
        self.progress = true;
        b
    }

    /// Starts `warp` on its requested phase after a stall of `stall` cycles.
    fn start_phase(&mut self, warp: u32, stall: u64) {
        let now = self.now;
        self.result.swap_stall_cycles += stall;
        let w = &mut self.world.warps[warp as usize];
        if w.held {
            w.phase += 1;
        }
        w.held = true;
        w.issued = 0;
        w.mem_cursor = 0;
        w.status = if stall > 0 {
            WarpStatus::SwapStalled(now + stall)
        } else {
            WarpStatus::Ready
        };
        self.progress = true;
    }

    fn admit(&mut self) -> Result<()> {
        match &mut self.policy {
            PolicyState::Baseline { .. } => loop {
                let PolicyState::Baseline { limit, resident } = &mut self.policy else {
                    unreachable!()
                };
                if *resident >= *limit || self.next_block >= self.num_blocks {
                    break;
                }
                *resident += 1;
                {
                    let b = self.launch_block();
                    for i in self.world.block_warps(b) {
                        let w = &mut self.world.warps[i];
                        w.held = true;
                        w.status = WarpStatus::Ready;
                    }
                }
            },
            PolicyState::Wlm { state, next_warp } => {
                let total = self.world.warps.len() as u32;
                while *next_warp < total {
                    let id = *next_warp;
                    let first = id % self.world.warps_per_block == 0;
                    let req = AdmissionRequest::Warp {
                        first_of_block: first,
                    };
                    if !wlm_admit(state, req, &self.workload.spec, self.cfg).is_admit() {
                        break;
                    }
                    *next_warp += 1;
                    if first {
                        let b = self.next_block;
                        self.next_block += 1;
                        self.world.blocks[b as usize] = BlockState {
                            unfinished: self.world.block_warps(b).len() as u32,
                            at_barrier: 0,
                        };
                        self.world.resident_blocks.push(b);
                    }
                    self.live.push(id);
                    let w = &mut self.world.warps[id as usize];
                    w.held = true;
                    w.status = WarpStatus::Ready;
                    self.progress = true;
                }
            }
            PolicyState::Zorua { .. } => loop {
                let PolicyState::Zorua { coord, tables, .. } = &mut self.policy else {
                    unreachable!()
                };
                let admitted = coord.schedule_pending(tables, self.cfg, &self.world)?;
                let pending_empty = coord.pending_len() == 0;
                // Launch only while every resident block, plus the new one,
                // could reach its remaining worst case on chip at once.
                // Otherwise blocks queue behind each other at phase
                // boundaries, and a partly admitted block holds resources at
                // its first barrier.
                let mut room = ResourceKind::ALL.map(|k| tables.get(k).physical_free());
                for &b in &self.world.resident_blocks {
                    let (phys, _) = coord.block_held(b, tables);
                    let worst = self.world.worst_of(b);
                    for i in 0..3 {
                        room[i] = room[i].saturating_sub(worst[i].saturating_sub(phys[i]));
                    }
                }
                // an empty SM takes the next block whatever its worst case
                let fits = self.next_block < self.num_blocks
                    && (self.world.resident_blocks.is_empty()
                        || self
                            .world
                            .worst_of(self.next_block)
                            .iter()
                            .zip(room)
                            .all(|(d, r)| *d <= r));
                for (warp, stall) in admitted {
                    self.start_phase(warp, stall);
                }
                let can_launch = pending_empty
                    && fits
                    && (self.world.resident_blocks.len() as u32) < self.cfg.max_resident_blocks;
                if !can_launch {
                    break;
                }
                let b = self.launch_block();
                let PolicyState::Zorua { coord, .. } = &mut self.policy else {
                    unreachable!()
                };
                for i in self.world.block_warps(b) {
                    coord.enqueue(i as u32, b, self.now);
                }
            },
        }
        Ok(())
    }

    /// Issues up to `issue_width` instructions; returns the count.
    fn issue(&mut self, observer: &mut dyn Observer) -> u64 {
        let n = self.live.len();
        if n == 0 {
            return 0;
        }
        let start = self.live.partition_point(|&id| id < self.rr);
        let mut issued = 0;
        let mut last = None;
        for k in 0..n {
            if issued == u64::from(self.cfg.issue_width) {
                break;
            }
            let id = self.live[(start + k) % n];
            let w = &mut self.world.warps[id as usize];
            if w.status != WarpStatus::Ready {
                continue;
            }
            let phase = &self.world.kernel.phases[w.phase];
            if w.issued >= phase.insts {
                continue;
            }
            observer.issue(self.now, id, w.block, w.phase, w.issued);
            let positions = &self.mem_positions[w.phase];
            if positions.get(w.mem_cursor) == Some(&w.issued) {
                w.mem_cursor += 1;
                w.status = WarpStatus::MemBlocked(self.now + u64::from(self.cfg.mem_latency));
                w.since = self.now;
            }
            w.issued += 1;
            issued += 1;
            last = Some(id);
        }
        if let Some(id) = last {
            self.rr = id + 1;
        }
        issued
    }

    fn expire(&mut self) {
        for &id in &self.live {
            let w = &mut self.world.warps[id as usize];
            match w.status {
                WarpStatus::MemBlocked(t) | WarpStatus::SwapStalled(t) if t <= self.now => {
                    w.status = WarpStatus::Ready;
                }
                _ => {}
            }
        }
    }

    fn complete_phases(&mut self) -> Result<()> {
        for k in 0..self.live.len() {
            let id = self.live[k];
            let w = &self.world.warps[id as usize];
            if w.status != WarpStatus::Ready || w.issued < self.world.kernel.phases[w.phase].insts {
                continue;
            }
            self.progress = true;
            let block = w.block;
            if self.world.kernel.phases[w.phase].ends_with_barrier {
                let w = &mut self.world.warps[id as usize];
                w.status = WarpStatus::AtBarrier;
                w.since = self.now;
                let bs = &mut self.world.blocks[block as usize];
                bs.at_barrier += 1;
                if bs.at_barrier == bs.unfinished {
                    bs.at_barrier = 0;
                    for i in self.world.block_warps(block) {
                        if self.world.warps[i].status == WarpStatus::AtBarrier {
                            self.advance(i as u32)?;
                        }
                    }
                }
            } else {
                self.advance(id)?;
            }
        }
        Ok(())
    }

    /// Moves a warp past a completed phase.
    fn advance(&mut self, id: u32) -> Result<()> {
        let w = &self.world.warps[id as usize];
        if w.phase + 1 == self.world.kernel.phases.len() {
            return self.finish(id);
        }
        match &mut self.policy {
            PolicyState::Baseline { .. } | PolicyState::Wlm { .. } => {
                let w = &mut self.world.warps[id as usize];
                w.phase += 1;
                w.issued = 0;
                w.mem_cursor = 0;
                w.status = WarpStatus::Ready;
            }
            PolicyState::Zorua { coord, tables, .. } => {
                let w = &mut self.world.warps[id as usize];
                w.status = WarpStatus::PendingAdmission;
                w.since = self.now;
                let adm = coord.on_phase_boundary(id, tables, self.cfg, &self.world, self.now)?;
                if let crate::coordinator::PhaseAdmission::Proceed(stall) = adm {
                    self.start_phase(id, stall);
                }
            }
        }
        Ok(())
    }

    fn finish(&mut self, id: u32) -> Result<()> {
        let block = self.world.warps[id as usize].block;
        self.world.warps[id as usize].status = WarpStatus::Finished;
        let bs = &mut self.world.blocks[block as usize];
        bs.unfinished -= 1;
        let block_done = bs.unfinished == 0;
        match &mut self.policy {
            PolicyState::Baseline { resident, .. } => {
                if block_done {
                    *resident -= 1;
                }
            }
            PolicyState::Wlm { state, .. } => {
                state.release_warp(&self.workload.spec, self.cfg);
                if block_done {
                    state.release_block_scratchpad(&self.workload.spec);
                }
            }
            PolicyState::Zorua { coord, tables, .. } => {
                let target = self.world.holder_smem(block, Some(id as usize));
                coord.retire_warp(id, block, target, tables)?;
                if block_done {
                    coord.retire_block(block, tables)?;
                }
            }
        }
        if block_done {
            self.world.resident_blocks.retain(|&b| b != block);
        }
        Ok(())
    }

    fn all_done(&self) -> bool {
        self.next_block == self.num_blocks && self.world.resident_blocks.is_empty()
    }

    fn record_peaks(&mut self) {
        let resident = self
            .live
            .iter()
            .filter(|&&id| self.world.warps[id as usize].held)
            .count() as u32;
        self.result.peak_resident_warps = self.result.peak_resident_warps.max(resident);
        if let PolicyState::Zorua { tables, .. } = &self.policy {
            for kind in ResourceKind::ALL {
                let t = tables.get(kind);
                let i = kind.index();
                self.result.peak_physical[i] =
                    self.result.peak_physical[i].max(t.physical_in_use());
                self.result.peak_swap[i] = self.result.peak_swap[i].max(t.swap_in_use());
            }
        }
    }

    /// Earliest cycle at which a stalled warp wakes up.
    fn next_wake(&self) -> Option<u64> {
        self.live
            .iter()
            .filter_map(|&id| match self.world.warps[id as usize].status {
                WarpStatus::MemBlocked(t) | WarpStatus::SwapStalled(t) => Some(t),
                _ => None,
            })
            .min()
    }

    fn run(&mut self, observer: &mut dyn Observer) -> Result<SimResult> {
        loop {
            if let PolicyState::Zorua {
                coord,
                tables,
                next_epoch,
                ..
            } = &mut self.policy
            {
                while self.now >= *next_epoch {
                    coord.end_epoch(tables);
                    *next_epoch += coord.params().epoch_cycles;
                }
            }
            self.progress = false;
            self.admit()?;
            if self.now == 0 {
                self.result.initial_resident_warps = self
                    .live
                    .iter()
                    .filter(|&&id| self.world.warps[id as usize].held)
                    .count() as u32;
            }
            let issued = self.issue(observer);
            self.result.instructions_issued += issued;
            self.expire();
            self.complete_phases()?;
            self.live
                .retain(|&id| self.world.warps[id as usize].status != WarpStatus::Finished);
            self.record_peaks();
            if let PolicyState::Zorua { coord, .. } = &mut self.policy {
                coord.record_cycles(1, issued, self.cfg.issue_width);
            }
            let tables = match &self.policy {
                PolicyState::Zorua { tables, .. } => Some(tables),
                _ => None,
            };
            observer.cycle_end(self.now, &self.world.warps, tables);

            if self.all_done() {
                break;
            }
            self.step_clock(issued > 0)?;
        }
        self.result.total_cycles = self.now + 1;
        let slots = self.result.total_cycles * u64::from(self.cfg.issue_width);
        self.result.issue_util = self.result.instructions_issued as f64 / slots as f64;
        if let PolicyState::Zorua { coord, .. } = &self.policy {
            let l = coord.limits();
            self.result.final_limits = Some(ResourceKind::ALL.map(|k| l.factor(k)));
        }
        Ok(self.result.clone())
    }

    /// Advances to the next cycle in which something can happen.
    fn step_clock(&mut self, issued: bool) -> Result<()> {
        let any_ready = self
            .live
            .iter()
            .any(|&id| self.world.warps[id as usize].status == WarpStatus::Ready);
        if issued || any_ready || self.progress {
            self.now += 1;
            if let PolicyState::Zorua { idle_epochs, .. } = &mut self.policy {
                *idle_epochs = 0;
            }
            return Ok(());
        }
        let wake = self.next_wake();
        let target = match &mut self.policy {
            PolicyState::Zorua {
                coord,
                next_epoch,
                idle_epochs,
                ..
            } => {
                if wake.is_none() && coord.waive_budget() {
                    self.now += 1;
                    return Ok(());
                }
                if wake.is_none() {
                    // only a change of the oversubscription factors can help
                    *idle_epochs += 1;
                    let p = coord.params();
                    let budget = ((p.o_max - 1.0) / p.step).ceil() as u32 * 3 + 4;
                    if *idle_epochs > budget {
                        return Err(self.stalled());
                    }
                }
                Some(wake.map_or(*next_epoch, |t| t.min(*next_epoch)))
            }
            _ => wake,
        };
        let Some(target) = target else {
            return Err(self.stalled());
        };
        let target = target.max(self.now + 1);
        let skipped = target - self.now - 1;
        if let PolicyState::Zorua { coord, .. } = &mut self.policy {
            coord.record_cycles(skipped, 0, self.cfg.issue_width);
        }
        self.now = target;
        Ok(())
    }

    fn stalled(&self) -> Error {
        let waiting = self
            .live
            .iter()
            .filter(|&&id| self.world.warps[id as usize].status != WarpStatus::Ready)
            .count();
        let mut detail = String::new();
        if let PolicyState::Zorua { coord, .. } = &self.policy {
            detail = format!(
                "; {} pending, last blocked by {:?}, limits {:?}",
                coord.pending_len(),
                coord.last_blocked(),
                ResourceKind::ALL.map(|k| coord.limits().factor(k))
            );
        }
        Error::Stalled(format!(
            "no progress at cycle {} with {waiting} waiting warps{detail}",
            self.now
        ))
    }
}
