//! GPU configurations, phase-annotated kernels and the workload file format.
//!
//! A workload file is line oriented UTF-8 text, one declaration per line, with
//! `#` starting a comment:
//!
//! ```text
//! kernel nqu
//! total_threads 8192
//! threads_per_block 256          # optional, default 256
//! smem_scope block               # optional: `block` (default) or `thread`
//! regs_per_thread 40             # optional, default = max over phases
//! smem_per_block 4224            # optional, default = max over phases
//! phase insts=40 regs=24 smem=0 mem_ratio=0.1 barrier=0
//! phase insts=120 regs=40 smem=4224 mem_ratio=0.05 barrier=1
//! phase insts=30 regs=16 smem=384 mem_ratio=0 barrier=0
//! ```
//!
//! With `smem_scope thread` every phase `smem` value is bytes per thread and
//! the per-block demand scales with the block size.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_WARP_SIZE: u32 = 32;
pub const DEFAULT_THREADS_PER_BLOCK: u32 = 256;

/// The three virtualized on-chip resources.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResourceKind {
    ThreadSlots,
    Registers,
    Scratchpad,
}

impl ResourceKind {
    pub const ALL: [ResourceKind; 3] = [
        ResourceKind::ThreadSlots,
        ResourceKind::Registers,
        ResourceKind::Scratchpad,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            ResourceKind::ThreadSlots => "thread_slots",
            ResourceKind::Registers => "registers",
            ResourceKind::Scratchpad => "scratchpad",
        }
    }
}

impl fmt::Display for ResourceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Physical SM capacities and timing parameters.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GpuConfig {
    /// 32-bit registers in the register file.
    pub registers_total: u32,
    pub scratchpad_bytes: u32,
    /// Hardware thread contexts.
    pub thread_slots: u32,
    pub max_resident_blocks: u32,
    pub warp_size: u32,
    /// Instructions issued per cycle across all warp schedulers.
    pub issue_width: u32,
    /// Cycles until a memory instruction's data returns.
    pub mem_latency: u32,
    /// Cycles per swap chunk transfer.
    pub swap_latency: u32,
    /// Registers per swap chunk.
    pub reg_chunk: u32,
    /// Scratchpad bytes per swap chunk.
    pub smem_chunk: u32,
}

impl GpuConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("registers_total", self.registers_total),
            ("scratchpad_bytes", self.scratchpad_bytes),
            ("thread_slots", self.thread_slots),
            ("max_resident_blocks", self.max_resident_blocks),
            ("warp_size", self.warp_size),
            ("issue_width", self.issue_width),
            ("reg_chunk", self.reg_chunk),
            ("smem_chunk", self.smem_chunk),
        ];
        for (field, value) in positive {
            if value == 0 {
                return Err(Error::invalid(format!("{field} must be > 0")));
            }
        }
        if !self.thread_slots.is_multiple_of(self.warp_size) {
            return Err(Error::invalid(
                "thread_slots must be a multiple of warp size",
            ));
        }
        Ok(())
    }

    /// Physical capacity of `kind` in its native units (threads, registers, bytes).
    pub fn capacity(&self, kind: ResourceKind) -> u64 {
        match kind {
            ResourceKind::ThreadSlots => u64::from(self.thread_slots),
            ResourceKind::Registers => u64::from(self.registers_total),
            ResourceKind::Scratchpad => u64::from(self.scratchpad_bytes),
        }
    }

    pub fn max_resident_warps(&self) -> u32 {
        self.thread_slots / self.warp_size
    }
}

pub const PRESET_NAMES: [&str; 3] = ["gen-a", "gen-b", "gen-c"];

/// Architecture presets. Capacities are authored so that resource cliffs and
/// the best launch configuration shift between generations; they are not
/// measurements of real silicon.
pub fn arch_preset(name: &str) -> Result<GpuConfig> {
    let base = GpuConfig {
        registers_total: 65536,
        scratchpad_bytes: 49152,
        thread_slots: 2048,
        max_resident_blocks: 16,
        warp_size: DEFAULT_WARP_SIZE,
        issue_width: 4,
        mem_latency: 400,
        swap_latency: 400,
        reg_chunk: 64,
        smem_chunk: 128,
    };
    match name {
        "gen-a" => Ok(GpuConfig {
            registers_total: 32768,
            thread_slots: 1536,
            max_resident_blocks: 8,
            issue_width: 2,
            ..base
        }),
        "gen-b" => Ok(base),
        "gen-c" => Ok(GpuConfig {
            scratchpad_bytes: 65536,
            max_resident_blocks: 32,
            ..base
        }),
        other => Err(Error::UnknownPreset(other.to_string())),
    }
}

/// Static resource demands of a kernel launch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ResourceSpec {
    pub threads_per_block: u32,
    pub regs_per_thread: u32,
    pub smem_per_block: u32,
}

impl ResourceSpec {
    pub fn validate(&self, warp_size: u32) -> Result<()> {
        if self.threads_per_block == 0 {
            return Err(Error::invalid("threads_per_block must be > 0"));
        }
        if warp_size == 0 || !self.threads_per_block.is_multiple_of(warp_size) {
            return Err(Error::invalid(
                "threads_per_block must be a multiple of warp size",
            ));
        }
        Ok(())
    }

    pub fn warps_per_block(&self, warp_size: u32) -> u32 {
        self.threads_per_block / warp_size
    }

    /// Per-block demand on `kind` under static allocation.
    pub fn block_demand(&self, kind: ResourceKind) -> u64 {
        match kind {
            ResourceKind::ThreadSlots => u64::from(self.threads_per_block),
            ResourceKind::Registers => {
                u64::from(self.threads_per_block) * u64::from(self.regs_per_thread)
            }
            ResourceKind::Scratchpad => u64::from(self.smem_per_block),
        }
    }
}

impl fmt::Display for ResourceSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "(tpb={}, regs={}, smem={})",
            self.threads_per_block, self.regs_per_thread, self.smem_per_block
        )
    }
}

/// One phase of a kernel, carrying the resource requirements announced by
/// the phase specifier that starts it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseDescriptor {
    /// Instructions per thread.
    pub insts: u32,
    /// Live registers per thread.
    pub regs: u32,
    /// Scratchpad demand: bytes per block, or per thread under [`SmemScope::Thread`].
    pub smem: u32,
    /// Fraction of instructions that are memory operations.
    pub mem_ratio: f64,
    pub ends_with_barrier: bool,
}

impl PhaseDescriptor {
    pub fn validate(&self) -> Result<()> {
        if self.insts == 0 {
            return Err(Error::invalid("phase insts must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.mem_ratio) {
            return Err(Error::invalid("phase mem_ratio must be in [0, 1]"));
        }
        Ok(())
    }

    /// Number of memory instructions in the phase.
    pub fn mem_ops(&self) -> u32 {
        (f64::from(self.insts) * self.mem_ratio).round() as u32
    }

    /// Whether instruction `idx` of the phase is a memory instruction.
    ///
    /// The `m` memory instructions sit at `floor((k + 0.5) * insts / m)` for
    /// `k = 0..m`, computed here in exact integer arithmetic.
    pub fn mem_positions(&self) -> Vec<u32> {
        let m = u64::from(self.mem_ops());
        let n = u64::from(self.insts);
        (0..m).map(|k| ((2 * k + 1) * n / (2 * m)) as u32).collect()
    }
}

/// How phase `smem` values scale with the block size.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmemScope {
    #[default]
    Block,
    Thread,
}

impl FromStr for SmemScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "block" => Ok(SmemScope::Block),
            "thread" => Ok(SmemScope::Thread),
            other => Err(Error::invalid(format!(
                "smem_scope must be `block` or `thread`, got `{other}`"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelProgram {
    pub name: String,
    pub phases: Vec<PhaseDescriptor>,
    /// Problem size in threads; fixed across block-size sweeps.
    pub total_threads: u64,
    #[serde(default)]
    pub smem_scope: SmemScope,
}

impl KernelProgram {
    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.chars().any(char::is_whitespace) {
            return Err(Error::invalid("kernel name must be a non-empty identifier"));
        }
        if self.phases.is_empty() {
            return Err(Error::invalid("kernel must contain at least one phase"));
        }
        if self.total_threads == 0 {
            return Err(Error::invalid("total_threads must be > 0"));
        }
        for phase in &self.phases {
            phase.validate()?;
        }
        Ok(())
    }

    /// Per-block scratchpad demand of `phase` at the given block size.
    pub fn block_smem(&self, phase: &PhaseDescriptor, threads_per_block: u32) -> u32 {
        match self.smem_scope {
            SmemScope::Block => phase.smem,
            SmemScope::Thread => phase.smem.saturating_mul(threads_per_block),
        }
    }

    pub fn num_blocks(&self, threads_per_block: u32) -> u64 {
        self.total_threads.div_ceil(u64::from(threads_per_block))
    }
}

/// The worst-case static specification a programmer would have to declare:
/// the maximum register and scratchpad demand over all phases.
pub fn declared_spec(kernel: &KernelProgram, threads_per_block: u32) -> ResourceSpec {
    let regs_per_thread = kernel.phases.iter().map(|p| p.regs).max().unwrap_or(0);
    let smem_per_block = kernel
        .phases
        .iter()
        .map(|p| kernel.block_smem(p, threads_per_block))
        .max()
        .unwrap_or(0);
    ResourceSpec {
        threads_per_block,
        regs_per_thread,
        smem_per_block,
    }
}

/// A kernel paired with the static specification it is launched with.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub kernel: KernelProgram,
    pub spec: ResourceSpec,
}

impl WorkloadSpec {
    /// Builds a workload launched with the declared (worst-case) specification.
    pub fn declared(kernel: KernelProgram, threads_per_block: u32) -> Self {
        let spec = declared_spec(&kernel, threads_per_block);
        WorkloadSpec { kernel, spec }
    }

    pub fn validate(&self, warp_size: u32) -> Result<()> {
        self.kernel.validate()?;
        self.spec.validate(warp_size)?;
        let need = declared_spec(&self.kernel, self.spec.threads_per_block);
        if self.spec.regs_per_thread < need.regs_per_thread {
            return Err(Error::invalid(format!(
                "regs_per_thread {} is below the phase demand {}",
                self.spec.regs_per_thread, need.regs_per_thread
            )));
        }
        if self.spec.smem_per_block < need.smem_per_block {
            return Err(Error::invalid(format!(
                "smem_per_block {} is below the phase demand {}",
                self.spec.smem_per_block, need.smem_per_block
            )));
        }
        Ok(())
    }

    pub fn num_blocks(&self) -> u64 {
        self.kernel.num_blocks(self.spec.threads_per_block)
    }
}

/// Parses a workload file assuming the default warp size.
pub fn parse_workload(content: &str) -> Result<WorkloadSpec> {
    parse_workload_for(content, DEFAULT_WARP_SIZE)
}

/// Parses a workload file, validating block sizes against `warp_size`.
pub fn parse_workload_for(content: &str, warp_size: u32) -> Result<WorkloadSpec> {
    let mut name: Option<String> = None;
    let mut total_threads: Option<u64> = None;
    let mut threads_per_block: Option<u32> = None;
    let mut regs_per_thread: Option<u32> = None;
    let mut smem_per_block: Option<u32> = None;
    let mut smem_scope = SmemScope::Block;
    let mut phases = Vec::new();

    for (idx, raw) in content.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let syntax = |msg: String| Error::Syntax { line: line_no, msg };
        let (key, rest) = match line.split_once(char::is_whitespace) {
            Some((k, r)) => (k, r.trim()),
            None => (line, ""),
        };
        match key {
            "kernel" => {
                if name.is_some() {
                    return Err(syntax("duplicate `kernel` declaration".into()));
                }
                if rest.is_empty() || rest.contains(char::is_whitespace) {
                    return Err(syntax("expected `kernel <name>`".into()));
                }
                name = Some(rest.to_string());
            }
            "total_threads" => {
                total_threads = Some(parse_num(rest, "total_threads").map_err(syntax)?)
            }
            "threads_per_block" => {
                threads_per_block = Some(parse_num(rest, "threads_per_block").map_err(syntax)?)
            }
            "regs_per_thread" => {
                regs_per_thread = Some(parse_num(rest, "regs_per_thread").map_err(syntax)?)
            }
            "smem_per_block" => {
                smem_per_block = Some(parse_num(rest, "smem_per_block").map_err(syntax)?)
            }
            "smem_scope" => smem_scope = rest.parse().map_err(|e: Error| syntax(e.to_string()))?,
            "phase" => phases.push(parse_phase(rest).map_err(|e| match e {
                Error::Invalid(msg) => syntax(msg),
                other => other,
            })?),
            other => return Err(syntax(format!("unknown declaration `{other}`"))),
        }
    }

    let kernel = KernelProgram {
        name: name.ok_or(Error::MissingKey("kernel"))?,
        phases,
        total_threads: total_threads.ok_or(Error::MissingKey("total_threads"))?,
        smem_scope,
    };
    kernel.validate()?;
    let tpb = threads_per_block.unwrap_or(DEFAULT_THREADS_PER_BLOCK);
    ResourceSpec {
        threads_per_block: tpb,
        regs_per_thread: 0,
        smem_per_block: 0,
    }
    .validate(warp_size)?;
    let declared = declared_spec(&kernel, tpb);
    let workload = WorkloadSpec {
        kernel,
        spec: ResourceSpec {
            threads_per_block: tpb,
            regs_per_thread: regs_per_thread.unwrap_or(declared.regs_per_thread),
            smem_per_block: smem_per_block.unwrap_or(declared.smem_per_block),
        },
    };
    workload.validate(warp_size)?;
    Ok(workload)
}

fn parse_num<T: FromStr>(text: &str, field: &str) -> std::result::Result<T, String> {
    text.parse()
        .map_err(|_| format!("`{field}` expects a non-negative integer, got `{text}`"))
}

fn parse_phase(rest: &str) -> Result<PhaseDescriptor> {
    let mut insts = None;
    let mut regs = 0;
    let mut smem = 0;
    let mut mem_ratio = 0.0;
    let mut barrier = false;
    for token in rest.split_whitespace() {
        let (key, value) = token
            .split_once('=')
            .ok_or_else(|| Error::invalid(format!("expected key=value, got `{token}`")))?;
        match key {
            "insts" => insts = Some(parse_num(value, key).map_err(Error::Invalid)?),
            "regs" => regs = parse_num(value, key).map_err(Error::Invalid)?,
            "smem" => smem = parse_num(value, key).map_err(Error::Invalid)?,
            "mem_ratio" => {
                mem_ratio = value.parse().map_err(|_| {
                    Error::invalid(format!("`mem_ratio` expects a number, got `{value}`"))
                })?
            }
            "barrier" => {
                barrier = match value {
                    "0" => false,
                    "1" => true,
                    _ => {
                        return Err(Error::invalid(format!(
                            "`barrier` expects 0 or 1, got `{value}`"
                        )))
                    }
                }
            }
            other => return Err(Error::invalid(format!("unknown phase key `{other}`"))),
        }
    }
    let phase = PhaseDescriptor {
        insts: insts.ok_or(Error::MissingKey("insts"))?,
        regs,
        smem,
        mem_ratio,
        ends_with_barrier: barrier,
    };
    phase.validate()?;
    Ok(phase)
}

/// Renders a workload in the file format accepted by [`parse_workload`].
pub fn serialize_workload(workload: &WorkloadSpec) -> String {
    let k = &workload.kernel;
    let mut out = String::new();
    let _ = writeln!(out, "kernel {}", k.name);
    let _ = writeln!(out, "total_threads {}", k.total_threads);
    if k.smem_scope == SmemScope::Thread {
        out.push_str("smem_scope thread\n");
    }
    let _ = writeln!(out, "threads_per_block {}", workload.spec.threads_per_block);
    let _ = writeln!(out, "regs_per_thread {}", workload.spec.regs_per_thread);
    let _ = writeln!(out, "smem_per_block {}", workload.spec.smem_per_block);
    for p in &k.phases {
        let _ = writeln!(
            out,
            "phase insts={} regs={} smem={} mem_ratio={} barrier={}",
            p.insts,
            p.regs,
            p.smem,
            p.mem_ratio,
            u8::from(p.ends_with_barrier)
        );
    }
    out
}
