//! C ABI over the smvirt simulator.
//!
//! Every fallible call returns an [`SmvStatus`]; on failure the message is
//! kept per thread and read back with [`smv_last_error`]. Handles are opaque
//! and must be released with their matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use smvirt::engine::{simulate, PolicyKind};
use smvirt::metrics::{self, SweepPoint, SweepResult};
use smvirt::occupancy::max_resident_blocks;
use smvirt::sweep::{run_sweep, write_outputs, SweepConfig};
use smvirt::workload::{arch_preset, parse_workload, GpuConfig, WorkloadSpec};
use smvirt::{CoordinatorParams, Error, ResourceSpec};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SmvStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    Parse = 3,
    Unschedulable = 4,
    Stalled = 5,
    Io = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SmvPolicy {
    Baseline = 0,
    Wlm = 1,
    Zorua = 2,
}

/// Coordinator tuning for [`SmvPolicy::Zorua`].
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SmvCoordinatorParams {
    pub u_target: f64,
    pub s_max: f64,
    pub step: f64,
    pub o_max: f64,
    pub epoch_cycles: u64,
    pub swap_budget: bool,
}

impl From<CoordinatorParams> for SmvCoordinatorParams {
    fn from(p: CoordinatorParams) -> Self {
        SmvCoordinatorParams {
            u_target: p.u_target,
            s_max: p.s_max,
            step: p.step,
            o_max: p.o_max,
            epoch_cycles: p.epoch_cycles,
            swap_budget: p.swap_budget,
        }
    }
}

impl From<SmvCoordinatorParams> for CoordinatorParams {
    fn from(p: SmvCoordinatorParams) -> Self {
        CoordinatorParams {
            u_target: p.u_target,
            s_max: p.s_max,
            step: p.step,
            o_max: p.o_max,
            epoch_cycles: p.epoch_cycles,
            swap_budget: p.swap_budget,
        }
    }
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SmvSimResult {
    pub total_cycles: u64,
    pub instructions_issued: u64,
    pub issue_util: f64,
    pub swap_stall_cycles: u64,
    pub peak_resident_warps: u32,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SmvBoxStats {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub mean: f64,
    pub whisker_low: f64,
    pub whisker_high: f64,
    pub outlier_count: usize,
}

/// Opaque GPU configuration.
pub struct SmvGpu(GpuConfig);

/// Opaque workload: a kernel plus its launch configuration.
pub struct SmvWorkload(WorkloadSpec);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> SmvStatus {
    match e {
        Error::Syntax { .. }
        | Error::MissingKey(_)
        | Error::Config(_)
        | Error::Csv(_)
        | Error::Json(_) => SmvStatus::Parse,
        Error::Invalid(_) | Error::UnknownPreset(_) | Error::Virt(_) => SmvStatus::InvalidArgument,
        Error::Unschedulable(_) | Error::ExceedsVirtualCapacity(_) => SmvStatus::Unschedulable,
        Error::Stalled(_) => SmvStatus::Stalled,
        Error::Io { .. } => SmvStatus::Io,
        Error::SweepPoint { source, .. } => status_of(source),
    }
}

/// Runs `f`, recording any error or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), (SmvStatus, String)>) -> SmvStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SmvStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal error: {msg}"));
            SmvStatus::Panic
        }
    }
}

fn lib(e: Error) -> (SmvStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(name: &str) -> (SmvStatus, String) {
    (SmvStatus::NullArgument, format!("`{name}` is null"))
}

unsafe fn text<'a>(p: *const c_char, name: &str) -> Result<&'a str, (SmvStatus, String)> {
    if p.is_null() {
        return Err(null(name));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (SmvStatus::InvalidArgument, format!("`{name}` is not UTF-8")))
}

unsafe fn writable<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, (SmvStatus, String)> {
    p.as_mut().ok_or_else(|| null(name))
}

unsafe fn slice<'a, T>(p: *const T, n: usize, name: &str) -> Result<&'a [T], (SmvStatus, String)> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(name));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

/// Message of the last failed call on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn smv_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn smv_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn smv_coordinator_defaults(out: *mut SmvCoordinatorParams) -> SmvStatus {
    guard(|| {
        *writable(out, "out")? = CoordinatorParams::default().into();
        Ok(())
    })
}

/// Looks up a preset (`gen-a`, `gen-b`, `gen-c`).
///
/// # Safety
/// `name` must be a nul-terminated string; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn smv_gpu_preset(name: *const c_char, out: *mut *mut SmvGpu) -> SmvStatus {
    guard(|| {
        let slot = writable(out, "out")?;
        let gpu = arch_preset(text(name, "name")?).map_err(lib)?;
        *slot = Box::into_raw(Box::new(SmvGpu(gpu)));
        Ok(())
    })
}

/// # Safety
/// `gpu` must come from [`smv_gpu_preset`] and not be freed twice. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn smv_gpu_free(gpu: *mut SmvGpu) {
    if !gpu.is_null() {
        drop(Box::from_raw(gpu));
    }
}

/// Parses a workload file's contents.
///
/// # Safety
/// `source` must be a nul-terminated string; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn smv_workload_parse(
    source: *const c_char,
    out: *mut *mut SmvWorkload,
) -> SmvStatus {
    guard(|| {
        let slot = writable(out, "out")?;
        let w = parse_workload(text(source, "source")?).map_err(lib)?;
        *slot = Box::into_raw(Box::new(SmvWorkload(w)));
        Ok(())
    })
}

/// Relaunches the workload at another block size with the declared
/// (worst-case) resource demands.
///
/// # Safety
/// `workload` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn smv_workload_set_block_size(
    workload: *mut SmvWorkload,
    threads_per_block: u32,
) -> SmvStatus {
    guard(|| {
        let w = writable(workload, "workload")?;
        let next = WorkloadSpec::declared(w.0.kernel.clone(), threads_per_block);
        next.spec
            .validate(smvirt::workload::DEFAULT_WARP_SIZE)
            .map_err(lib)?;
        w.0 = next;
        Ok(())
    })
}

/// # Safety
/// `workload` must come from [`smv_workload_parse`] and not be freed twice. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn smv_workload_free(workload: *mut SmvWorkload) {
    if !workload.is_null() {
        drop(Box::from_raw(workload));
    }
}

/// Blocks of the workload that fit on the SM at once under
/// static allocation.
///
/// # Safety
/// Handles must be live; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn smv_max_resident_blocks(
    workload: *const SmvWorkload,
    gpu: *const SmvGpu,
    out: *mut u32,
) -> SmvStatus {
    guard(|| {
        let w = workload.as_ref().ok_or_else(|| null("workload"))?;
        let g = gpu.as_ref().ok_or_else(|| null("gpu"))?;
        *writable(out, "out")? = max_resident_blocks(&w.0.spec, &g.0);
        Ok(())
    })
}

/// Simulates the workload. `params` is only read for Zorua; null selects the
/// defaults.
///
/// # Safety
/// Handles must be live; `params` null or readable; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn smv_simulate(
    workload: *const SmvWorkload,
    gpu: *const SmvGpu,
    policy: SmvPolicy,
    params: *const SmvCoordinatorParams,
    out: *mut SmvSimResult,
) -> SmvStatus {
    guard(|| {
        let w = workload.as_ref().ok_or_else(|| null("workload"))?;
        let g = gpu.as_ref().ok_or_else(|| null("gpu"))?;
        let slot = writable(out, "out")?;
        let policy = match policy {
            SmvPolicy::Baseline => PolicyKind::Baseline,
            SmvPolicy::Wlm => PolicyKind::Wlm,
            SmvPolicy::Zorua => PolicyKind::Zorua(
                params
                    .as_ref()
                    .map_or_else(CoordinatorParams::default, |p| (*p).into()),
            ),
        };
        let r = simulate(&w.0, &g.0, policy).map_err(lib)?;
        *slot = SmvSimResult {
            total_cycles: r.total_cycles,
            instructions_issued: r.instructions_issued,
            issue_util: r.issue_util,
            swap_stall_cycles: r.swap_stall_cycles,
            peak_resident_warps: r.peak_resident_warps,
        };
        Ok(())
    })
}

/// Tukey box statistics of `n` samples.
///
/// # Safety
/// `samples` must hold `n` readable values; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn smv_tukey_stats(
    samples: *const f64,
    n: usize,
    out: *mut SmvBoxStats,
) -> SmvStatus {
    guard(|| {
        let slot = writable(out, "out")?;
        let s = metrics::tukey_stats(slice(samples, n, "samples")?).map_err(lib)?;
        *slot = SmvBoxStats {
            min: s.min,
            q1: s.q1,
            median: s.median,
            q3: s.q3,
            max: s.max,
            mean: s.mean,
            whisker_low: s.whisker_low,
            whisker_high: s.whisker_high,
            outlier_count: s.outliers.len(),
        };
        Ok(())
    })
}

/// Sweep over `n` points; point `i` stands for block size `32 * (i + 1)`.
fn indexed_sweep(arch: &str, cycles: &[u64]) -> SweepResult {
    SweepResult {
        kernel: "ffi".into(),
        arch: arch.into(),
        policy: "ffi".into(),
        points: cycles
            .iter()
            .enumerate()
            .map(|(i, &c)| SweepPoint {
                spec: ResourceSpec {
                    threads_per_block: 32 * (i as u32 + 1),
                    regs_per_thread: 0,
                    smem_per_block: 0,
                },
                total_cycles: c,
            })
            .collect(),
    }
}

/// `1 - min / max` over the cycle counts of a sweep.
///
/// # Safety
/// `cycles` must hold `n` readable values; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn smv_performance_range(
    cycles: *const u64,
    n: usize,
    out: *mut f64,
) -> SmvStatus {
    guard(|| {
        let slot = writable(out, "out")?;
        let s = indexed_sweep("a", slice(cycles, n, "cycles")?);
        s.validate().map_err(lib)?;
        *slot = metrics::performance_range(&s);
        Ok(())
    })
}

/// Porting loss between two sweeps whose `i`-th entries are the same launch
/// configuration.
///
/// # Safety
/// Both arrays must hold `n` readable values; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn smv_porting_loss(
    source: *const u64,
    target: *const u64,
    n: usize,
    margin: f64,
    out: *mut f64,
) -> SmvStatus {
    guard(|| {
        let slot = writable(out, "out")?;
        let src = indexed_sweep("source", slice(source, n, "source")?);
        let dst = indexed_sweep("target", slice(target, n, "target")?);
        *slot = metrics::porting_loss(&src, &dst, margin).map_err(lib)?;
        Ok(())
    })
}

/// Runs the sweep described by a config file and writes `results.csv` and
/// `summary.json`. A null `out_dir` keeps the config's directory; zero
/// `parallelism` keeps the config's worker count. `rows`, when not null,
/// receives the number of simulations.
///
/// # Safety
/// Strings must be nul-terminated or (for `out_dir`) null; `rows` null or writable.
#[no_mangle]
pub unsafe extern "C" fn smv_run_sweep(
    config_path: *const c_char,
    out_dir: *const c_char,
    parallelism: usize,
    rows: *mut usize,
) -> SmvStatus {
    guard(|| {
        let mut cfg =
            SweepConfig::load(&PathBuf::from(text(config_path, "config_path")?)).map_err(lib)?;
        if parallelism > 0 {
            cfg.parallelism = parallelism;
        }
        let dir = if out_dir.is_null() {
            cfg.output_dir.clone()
        } else {
            PathBuf::from(text(out_dir, "out_dir")?)
        };
        let kernels = cfg.kernels().map_err(lib)?;
        let output = run_sweep(&cfg, &kernels).map_err(lib)?;
        write_outputs(&output, &dir).map_err(lib)?;
        if let Some(r) = rows.as_mut() {
            *r = output.rows.len();
        }
        Ok(())
    })
}
