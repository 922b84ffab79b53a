//! Simulation of on-chip resource virtualization for a GPU streaming
//! multiprocessor: static block-level allocation, warp-level allocation, and
//! phase-based dynamic allocation with oversubscription into a swap space.

pub mod coordinator;
pub mod engine;
pub mod error;
pub mod metrics;
pub mod occupancy;
pub mod phasegen;
pub mod sweep;
pub mod virt;
pub mod workload;

pub use coordinator::{Coordinator, CoordinatorParams};
pub use engine::{simulate, PolicyKind, SimResult};
pub use error::{Error, Result};
pub use metrics::{BoxStats, SweepResult};
pub use sweep::{run_sweep, SweepConfig};
pub use workload::{
    arch_preset, parse_workload, GpuConfig, KernelProgram, ResourceSpec, WorkloadSpec,
};
