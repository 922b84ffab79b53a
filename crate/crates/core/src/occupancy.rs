//! Static admission: block-granularity occupancy (Baseline) and the
//! warp-granularity admission rule (WLM).

use serde::{Deserialize, Serialize};

use crate::workload::{GpuConfig, ResourceKind, ResourceSpec};

/// A constraint that can bound residency.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Limit {
    ThreadSlots,
    Registers,
    Scratchpad,
    BlockCap,
}

impl From<ResourceKind> for Limit {
    fn from(kind: ResourceKind) -> Self {
        match kind {
            ResourceKind::ThreadSlots => Limit::ThreadSlots,
            ResourceKind::Registers => Limit::Registers,
            ResourceKind::Scratchpad => Limit::Scratchpad,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AdmitDecision {
    Admit,
    Reject(Limit),
}

impl AdmitDecision {
    pub fn is_admit(self) -> bool {
        matches!(self, AdmitDecision::Admit)
    }

    pub fn limiting_resource(self) -> Option<Limit> {
        match self {
            AdmitDecision::Admit => None,
            AdmitDecision::Reject(l) => Some(l),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Occupancy {
    pub blocks: u32,
    /// The constraint attaining the minimum (first in slots, registers,
    /// scratchpad, block-cap order on ties).
    pub limiting: Limit,
}

/// Resident blocks under static allocation together with the binding limit.
/// Resources with zero per-block demand never bind.
pub fn occupancy(spec: &ResourceSpec, cfg: &GpuConfig) -> Occupancy {
    let mut best = Occupancy {
        blocks: cfg.max_resident_blocks,
        limiting: Limit::BlockCap,
    };
    for kind in ResourceKind::ALL.iter().rev() {
        let demand = spec.block_demand(*kind);
        if demand == 0 {
            continue;
        }
        let fit = (cfg.capacity(*kind) / demand).min(u64::from(u32::MAX)) as u32;
        if fit <= best.blocks {
            best = Occupancy {
                blocks: fit,
                limiting: (*kind).into(),
            };
        }
    }
    best
}

pub fn max_resident_blocks(spec: &ResourceSpec, cfg: &GpuConfig) -> u32 {
    occupancy(spec, cfg).blocks
}

/// Resident warps implied by [`max_resident_blocks`].
pub fn max_resident_warps(spec: &ResourceSpec, cfg: &GpuConfig) -> u32 {
    max_resident_blocks(spec, cfg) * spec.warps_per_block(cfg.warp_size)
}

/// What a WLM admission asks for.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AdmissionRequest {
    /// One warp. The first warp of a block also claims the block's scratchpad
    /// and a resident-block entry.
    Warp { first_of_block: bool },
    /// A whole block at once (Baseline semantics).
    Block,
}

/// Allocation bookkeeping for one SM under static or warp-level allocation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SmOccupancyState {
    capacity: [u64; 3],
    allocated: [u64; 3],
    block_cap: u32,
    resident_blocks: u32,
}

impl SmOccupancyState {
    pub fn new(cfg: &GpuConfig) -> Self {
        SmOccupancyState {
            capacity: ResourceKind::ALL.map(|k| cfg.capacity(k)),
            allocated: [0; 3],
            block_cap: cfg.max_resident_blocks,
            resident_blocks: 0,
        }
    }

    pub fn free(&self, kind: ResourceKind) -> u64 {
        self.capacity[kind.index()] - self.allocated[kind.index()]
    }

    pub fn allocated(&self, kind: ResourceKind) -> u64 {
        self.allocated[kind.index()]
    }

    pub fn capacity(&self, kind: ResourceKind) -> u64 {
        self.capacity[kind.index()]
    }

    pub fn resident_blocks(&self) -> u32 {
        self.resident_blocks
    }

    fn warp_demand(spec: &ResourceSpec, cfg: &GpuConfig) -> [u64; 3] {
        let ws = u64::from(cfg.warp_size);
        [ws, ws * u64::from(spec.regs_per_thread), 0]
    }

    fn request_demand(
        request: AdmissionRequest,
        spec: &ResourceSpec,
        cfg: &GpuConfig,
    ) -> ([u64; 3], bool) {
        match request {
            AdmissionRequest::Warp { first_of_block } => {
                let mut d = Self::warp_demand(spec, cfg);
                if first_of_block {
                    d[ResourceKind::Scratchpad.index()] = u64::from(spec.smem_per_block);
                }
                (d, first_of_block)
            }
            AdmissionRequest::Block => (ResourceKind::ALL.map(|k| spec.block_demand(k)), true),
        }
    }

    /// Returns a warp's slots and registers.
    pub fn release_warp(&mut self, spec: &ResourceSpec, cfg: &GpuConfig) {
        let d = Self::warp_demand(spec, cfg);
        for (a, d) in self.allocated.iter_mut().zip(d) {
            *a = a.checked_sub(d).expect("warp release exceeds allocation");
        }
    }

    /// Returns the block-granular part of a block: its scratchpad and block entry.
    pub fn release_block_scratchpad(&mut self, spec: &ResourceSpec) {
        let s = &mut self.allocated[ResourceKind::Scratchpad.index()];
        *s = s
            .checked_sub(u64::from(spec.smem_per_block))
            .expect("scratchpad release exceeds allocation");
        self.resident_blocks = self
            .resident_blocks
            .checked_sub(1)
            .expect("no resident block to release");
    }

    /// Returns every resource of a whole block.
    pub fn release_block(&mut self, spec: &ResourceSpec) {
        for kind in ResourceKind::ALL {
            let a = &mut self.allocated[kind.index()];
            *a = a
                .checked_sub(spec.block_demand(kind))
                .expect("block release exceeds allocation");
        }
        self.resident_blocks = self
            .resident_blocks
            .checked_sub(1)
            .expect("no resident block to release");
    }
}

/// Warp-level admission. Checks thread slots, registers, scratchpad and then
/// the resident-block cap; on success the demand is deducted from `state`.
pub fn wlm_admit(
    state: &mut SmOccupancyState,
    request: AdmissionRequest,
    spec: &ResourceSpec,
    cfg: &GpuConfig,
) -> AdmitDecision {
    let (demand, new_block) = SmOccupancyState::request_demand(request, spec, cfg);
    for kind in ResourceKind::ALL {
        if demand[kind.index()] > state.free(kind) {
            return AdmitDecision::Reject(kind.into());
        }
    }
    if new_block && state.resident_blocks >= state.block_cap {
        return AdmitDecision::Reject(Limit::BlockCap);
    }
    for (a, d) in state.allocated.iter_mut().zip(demand) {
        *a += d;
    }
    if new_block {
        state.resident_blocks += 1;
    }
    AdmitDecision::Admit
}
