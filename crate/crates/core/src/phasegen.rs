//! Phase identification from per-instruction resource traces, and a seeded
//! generator of synthetic phase-annotated kernels.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::workload::{
    KernelProgram, PhaseDescriptor, SmemScope, WorkloadSpec, DEFAULT_THREADS_PER_BLOCK,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub live_regs: u32,
    pub live_smem: u32,
    pub is_mem: bool,
    pub is_barrier: bool,
}

pub type InstructionTrace = Vec<TraceRecord>;

/// Parses one record per line: `live_regs live_smem is_mem is_barrier`.
/// Blank lines and `#` comments are skipped.
pub fn parse_trace(content: &str) -> Result<InstructionTrace> {
    let mut out = Vec::new();
    for (idx, raw) in content.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let syntax = |msg: String| Error::Syntax { line: idx + 1, msg };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(syntax(format!("expected 4 fields, found {}", fields.len())));
        }
        let num = |s: &str, name: &str| {
            s.parse::<u32>()
                .map_err(|_| syntax(format!("{name} must be a non-negative integer, got `{s}`")))
        };
        let flag = |s: &str, name: &str| match s {
            "0" => Ok(false),
            "1" => Ok(true),
            _ => Err(syntax(format!("{name} must be 0 or 1, got `{s}`"))),
        };
        out.push(TraceRecord {
            live_regs: num(fields[0], "live_regs")?,
            live_smem: num(fields[1], "live_smem")?,
            is_mem: flag(fields[2], "is_mem")?,
            is_barrier: flag(fields[3], "is_barrier")?,
        });
    }
    if out.is_empty() {
        return Err(Error::invalid("trace is empty"));
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseParams {
    /// Relative demand change that starts a new phase.
    pub delta: f64,
    /// Instructions a phase must have before a demand change may end it.
    pub min_len: u32,
}

impl Default for PhaseParams {
    fn default() -> Self {
        PhaseParams {
            delta: 0.25,
            min_len: 8,
        }
    }
}

impl PhaseParams {
    pub fn validate(&self) -> Result<()> {
        if self.delta.is_nan() || self.delta <= 0.0 {
            return Err(Error::invalid("delta must be > 0"));
        }
        if self.min_len == 0 {
            return Err(Error::invalid("min_len must be >= 1"));
        }
        Ok(())
    }
}

fn differs(x: u32, established: u32, delta: f64) -> bool {
    let diff = f64::from(x.abs_diff(established));
    diff / f64::from(established.max(1)) > delta
}

#[derive(Default)]
struct Segment {
    len: u32,
    regs: u32,
    smem: u32,
    mem: u32,
}

impl Segment {
    fn push(&mut self, r: &TraceRecord) {
        self.len += 1;
        self.regs = self.regs.max(r.live_regs);
        self.smem = self.smem.max(r.live_smem);
        self.mem += u32::from(r.is_mem);
    }

    fn emit(&mut self, barrier: bool) -> PhaseDescriptor {
        let s = std::mem::take(self);
        PhaseDescriptor {
            insts: s.len,
            regs: s.regs,
            smem: s.smem,
            mem_ratio: f64::from(s.mem) / f64::from(s.len),
            ends_with_barrier: barrier,
        }
    }
}

fn segment(trace: &[TraceRecord], params: &PhaseParams) -> Vec<PhaseDescriptor> {
    let mut phases = Vec::new();
    let mut seg = Segment::default();
    for r in trace {
        if seg.len >= params.min_len
            && (differs(r.live_regs, seg.regs, params.delta)
                || differs(r.live_smem, seg.smem, params.delta))
        {
            phases.push(seg.emit(false));
        }
        seg.push(r);
        if r.is_barrier {
            phases.push(seg.emit(true));
        }
    }
    if seg.len > 0 {
        phases.push(seg.emit(false));
    }
    phases
}

/// Expands phases back into a trace with constant demand per phase, memory
/// instructions at the engine's positions and a trailing barrier.
pub fn flatten_phases(phases: &[PhaseDescriptor]) -> InstructionTrace {
    let mut out = Vec::new();
    for p in phases {
        let positions = p.mem_positions();
        let mut next = positions.iter().peekable();
        for i in 0..p.insts {
            let is_mem = next.peek() == Some(&&i);
            if is_mem {
                next.next();
            }
            out.push(TraceRecord {
                live_regs: p.regs,
                live_smem: p.smem,
                is_mem,
                is_barrier: p.ends_with_barrier && i + 1 == p.insts,
            });
        }
    }
    out
}

const MAX_COALESCE_ROUNDS: usize = 64;

/// Greedy left-to-right segmentation. A phase ends after every barrier, and
/// before an instruction whose live registers or scratchpad differ from the
/// phase's maxima by more than `delta` once the phase has `min_len`
/// instructions. The result is then re-segmented from its own flattened form
/// until stable, which merges neighbours that only split because of
/// intra-phase fluctuation.
pub fn identify_phases(trace: &[TraceRecord], params: &PhaseParams) -> Vec<PhaseDescriptor> {
    let mut phases = segment(trace, params);
    for _ in 0..MAX_COALESCE_ROUNDS {
        let next = segment(&flatten_phases(&phases), params);
        if next == phases {
            break;
        }
        phases = next;
    }
    phases
}

/// xorshift64* (Vigna, 2014) seeded through splitmix64.
#[derive(Clone, Debug)]
pub struct Rng {
    state: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        let mut z = seed.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
        Rng {
            state: if z == 0 { 0x2545_F491_4F6C_DD1D } else { z },
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        let mut x = self.state;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        self.state = x;
        x.wrapping_mul(0x2545_F491_4F6C_DD1D)
    }

    /// Uniform in `lo..=hi`.
    pub fn range(&mut self, lo: u32, hi: u32) -> u32 {
        debug_assert!(lo <= hi);
        let span = u64::from(hi - lo) + 1;
        lo + (self.next_u64() % span) as u32
    }

    /// Uniform in `[0, 1)`.
    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Archetype {
    ComputeHeavy,
    ScratchpadBurst,
    BarrierHeavy,
    Mixed,
}

impl Archetype {
    pub const ALL: [Archetype; 4] = [
        Archetype::ComputeHeavy,
        Archetype::ScratchpadBurst,
        Archetype::BarrierHeavy,
        Archetype::Mixed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Archetype::ComputeHeavy => "compute-heavy",
            Archetype::ScratchpadBurst => "scratchpad-burst",
            Archetype::BarrierHeavy => "barrier-heavy",
            Archetype::Mixed => "mixed",
        }
    }

    fn short(self) -> &'static str {
        match self {
            Archetype::ComputeHeavy => "compute",
            Archetype::ScratchpadBurst => "burst",
            Archetype::BarrierHeavy => "barrier",
            Archetype::Mixed => "mixed",
        }
    }
}

impl fmt::Display for Archetype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Archetype {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Archetype::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| {
                Error::invalid(format!(
                    "unknown template `{s}` (expected compute-heavy, scratchpad-burst, barrier-heavy or mixed)"
                ))
            })
    }
}

/// Inclusive integer range.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub lo: u32,
    pub hi: u32,
}

const fn span(lo: u32, hi: u32) -> Span {
    Span { lo, hi }
}

impl Span {
    fn draw(self, rng: &mut Rng) -> u32 {
        rng.range(self.lo, self.hi)
    }

    fn check(self, name: &str) -> Result<()> {
        if self.lo > self.hi {
            return Err(Error::invalid(format!("{name} range is empty")));
        }
        Ok(())
    }
}

/// Demand ranges of an archetype. "Peak" values apply to the phases that
/// define the kernel's worst case, "base" values to the rest.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemandRanges {
    pub insts: Span,
    pub peak_insts: Span,
    pub base_regs: Span,
    pub peak_regs: Span,
    pub base_smem: Span,
    pub peak_smem: Span,
    /// Memory instructions per 1000.
    pub mem_permille: Span,
    pub smem_scope: SmemScope,
}

impl DemandRanges {
    pub fn for_archetype(a: Archetype) -> Self {
        match a {
            Archetype::ComputeHeavy => DemandRanges {
                insts: span(48, 96),
                peak_insts: span(48, 96),
                base_regs: span(16, 28),
                peak_regs: span(28, 32),
                base_smem: span(0, 1024),
                peak_smem: span(1024, 2048),
                mem_permille: span(0, 20),
                smem_scope: SmemScope::Block,
            },
            Archetype::ScratchpadBurst => DemandRanges {
                insts: span(24, 48),
                peak_insts: span(8, 16),
                base_regs: span(12, 20),
                peak_regs: span(20, 24),
                base_smem: span(2, 8),
                peak_smem: span(40, 48),
                mem_permille: span(40, 80),
                smem_scope: SmemScope::Thread,
            },
            Archetype::BarrierHeavy => DemandRanges {
                insts: span(16, 32),
                peak_insts: span(8, 16),
                base_regs: span(12, 20),
                peak_regs: span(28, 32),
                base_smem: span(4, 8),
                peak_smem: span(24, 32),
                mem_permille: span(40, 80),
                smem_scope: SmemScope::Thread,
            },
            Archetype::Mixed => DemandRanges {
                insts: span(24, 48),
                peak_insts: span(8, 16),
                base_regs: span(10, 18),
                peak_regs: span(28, 32),
                base_smem: span(2, 8),
                peak_smem: span(32, 48),
                mem_permille: span(40, 80),
                smem_scope: SmemScope::Thread,
            },
        }
    }

    fn validate(&self) -> Result<()> {
        self.insts.check("insts")?;
        self.peak_insts.check("peak_insts")?;
        self.base_regs.check("base_regs")?;
        self.peak_regs.check("peak_regs")?;
        self.base_smem.check("base_smem")?;
        self.peak_smem.check("peak_smem")?;
        self.mem_permille.check("mem_permille")?;
        if self.insts.lo == 0 || self.peak_insts.lo == 0 {
            return Err(Error::invalid("phase insts ranges must start at >= 1"));
        }
        if self.mem_permille.hi > 1000 {
            return Err(Error::invalid("mem_permille must be <= 1000"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorTemplate {
    pub archetype: Archetype,
    pub seed: u64,
    pub phases: Span,
    pub total_threads: u64,
    pub demands: DemandRanges,
}

impl GeneratorTemplate {
    /// The archetype's default ranges.
    pub fn new(archetype: Archetype, seed: u64) -> Self {
        let phases = match archetype {
            Archetype::ComputeHeavy => span(2, 4),
            Archetype::ScratchpadBurst => span(4, 6),
            Archetype::BarrierHeavy => span(6, 8),
            Archetype::Mixed => span(4, 6),
        };
        GeneratorTemplate {
            archetype,
            seed,
            phases,
            total_threads: 16384,
            demands: DemandRanges::for_archetype(archetype),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.phases.check("phases")?;
        if self.phases.lo < 2 {
            return Err(Error::invalid("templates need at least two phases"));
        }
        if self.total_threads == 0 {
            return Err(Error::invalid("total_threads must be > 0"));
        }
        self.demands.validate()
    }
}

/// Builds a kernel from a template; identical templates give identical
/// kernels on every platform.
pub fn generate_workload(template: &GeneratorTemplate) -> Result<WorkloadSpec> {
    template.validate()?;
    let d = &template.demands;
    let mut rng = Rng::new(template.seed);
    let n = template.phases.draw(&mut rng) as usize;
    let arch = template.archetype;

    // which phases carry the peak demand
    let mut peak = vec![false; n];
    match arch {
        Archetype::ComputeHeavy => peak[rng.range(0, n as u32 - 1) as usize] = true,
        Archetype::ScratchpadBurst | Archetype::Mixed => {
            // a short burst early in the kernel, followed by longer quiet phases
            peak[rng.range(0, (n as u32 - 2).min(1)) as usize] = true;
        }
        Archetype::BarrierHeavy => {
            for i in (0..n).step_by(2) {
                peak[i] = true;
            }
        }
    }

    let mut phases = Vec::with_capacity(n);
    for (i, &is_peak) in peak.iter().enumerate() {
        let insts = if is_peak { d.peak_insts } else { d.insts }.draw(&mut rng);
        let regs = match arch {
            Archetype::ScratchpadBurst => d.base_regs.draw(&mut rng).max(if is_peak {
                d.peak_regs.draw(&mut rng)
            } else {
                0
            }),
            _ if is_peak => d.peak_regs.draw(&mut rng),
            _ => d.base_regs.draw(&mut rng),
        };
        let smem = if is_peak { d.peak_smem } else { d.base_smem }.draw(&mut rng);
        let mem_ratio = f64::from(d.mem_permille.draw(&mut rng)) / 1000.0;
        let barrier = match arch {
            Archetype::ComputeHeavy => false,
            Archetype::BarrierHeavy => true,
            Archetype::ScratchpadBurst | Archetype::Mixed => is_peak,
        };
        phases.push(PhaseDescriptor {
            insts,
            regs,
            smem,
            mem_ratio,
            ends_with_barrier: barrier && i + 1 < n,
        });
    }

    if arch == Archetype::ScratchpadBurst {
        // at least a 4x gap between the largest and smallest positive demand
        let max = phases.iter().map(|p| p.smem).max().unwrap_or(0);
        let floor = (max / 4).max(1);
        if let Some(p) = phases
            .iter_mut()
            .filter(|p| p.smem > 0)
            .min_by_key(|p| p.smem)
        {
            if p.smem > floor {
                p.smem = floor;
            }
        }
        if phases.iter().all(|p| p.smem == 0 || p.smem == max) {
            let last = phases.len() - 1;
            phases[last].smem = floor;
        }
    }

    let kernel = KernelProgram {
        name: format!("{}-{}", arch.short(), template.seed),
        phases,
        total_threads: template.total_threads,
        smem_scope: d.smem_scope,
    };
    kernel.validate()?;
    Ok(WorkloadSpec::declared(kernel, DEFAULT_THREADS_PER_BLOCK))
}
