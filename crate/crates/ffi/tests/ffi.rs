use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use smvirt_ffi::*;

const WORKLOAD: &str = "kernel t\ntotal_threads 1024\nthreads_per_block 256\n\
phase insts=30 regs=40 smem=12000 mem_ratio=0.1 barrier=1\n\
phase insts=50 regs=16 smem=1000 mem_ratio=0.05 barrier=0\n";

fn last_error() -> String {
    let p = smv_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn gpu(name: &str) -> *mut SmvGpu {
    let name = CString::new(name).unwrap();
    let mut g = ptr::null_mut();
    assert_eq!(
        unsafe { smv_gpu_preset(name.as_ptr(), &mut g) },
        SmvStatus::Ok
    );
    g
}

fn workload(text: &str) -> *mut SmvWorkload {
    let src = CString::new(text).unwrap();
    let mut w = ptr::null_mut();
    assert_eq!(
        unsafe { smv_workload_parse(src.as_ptr(), &mut w) },
        SmvStatus::Ok
    );
    w
}

#[test]
fn simulate_matches_the_library() {
    let g = gpu("gen-b");
    let w = workload(WORKLOAD);
    let lib_w = smvirt::parse_workload(WORKLOAD).unwrap();
    let lib_g = smvirt::arch_preset("gen-b").unwrap();
    for (policy, kind) in [
        (SmvPolicy::Baseline, smvirt::PolicyKind::Baseline),
        (SmvPolicy::Wlm, smvirt::PolicyKind::Wlm),
        (
            SmvPolicy::Zorua,
            smvirt::PolicyKind::Zorua(Default::default()),
        ),
    ] {
        let mut r = SmvSimResult::default();
        assert_eq!(
            unsafe { smv_simulate(w, g, policy, ptr::null(), &mut r) },
            SmvStatus::Ok
        );
        let want = smvirt::simulate(&lib_w, &lib_g, kind).unwrap();
        assert_eq!(r.total_cycles, want.total_cycles);
        assert_eq!(r.instructions_issued, want.instructions_issued);
        assert_eq!(r.swap_stall_cycles, want.swap_stall_cycles);
    }

    let mut blocks = 0;
    assert_eq!(
        unsafe { smv_max_resident_blocks(w, g, &mut blocks) },
        SmvStatus::Ok
    );
    assert_eq!(blocks, 4);
    assert_eq!(
        unsafe { smv_workload_set_block_size(w, 128) },
        SmvStatus::Ok
    );
    assert_eq!(
        unsafe { smv_max_resident_blocks(w, g, &mut blocks) },
        SmvStatus::Ok
    );
    assert_eq!(blocks, 4);
    assert_eq!(
        unsafe { smv_workload_set_block_size(w, 100) },
        SmvStatus::InvalidArgument
    );

    unsafe {
        smv_workload_free(w);
        smv_gpu_free(g);
        smv_workload_free(ptr::null_mut());
        smv_gpu_free(ptr::null_mut());
    }
}

#[test]
fn zorua_params_are_honoured() {
    let g = gpu("gen-b");
    let w = workload(WORKLOAD);
    let mut p = SmvCoordinatorParams {
        u_target: 0.0,
        s_max: 0.0,
        step: 0.0,
        o_max: 0.0,
        epoch_cycles: 0,
        swap_budget: false,
    };
    assert_eq!(unsafe { smv_coordinator_defaults(&mut p) }, SmvStatus::Ok);
    assert_eq!(
        smvirt::CoordinatorParams::from(p),
        smvirt::CoordinatorParams::default()
    );
    p.o_max = 0.5;
    let mut r = SmvSimResult::default();
    assert_eq!(
        unsafe { smv_simulate(w, g, SmvPolicy::Zorua, &p, &mut r) },
        SmvStatus::InvalidArgument
    );
    assert!(last_error().contains("o_max"), "{}", last_error());
    unsafe {
        smv_workload_free(w);
        smv_gpu_free(g);
    }
}

#[test]
fn errors_carry_status_and_message() {
    let mut g = ptr::null_mut();
    let name = CString::new("gen-q").unwrap();
    assert_eq!(
        unsafe { smv_gpu_preset(name.as_ptr(), &mut g) },
        SmvStatus::InvalidArgument
    );
    assert!(g.is_null());
    assert!(last_error().contains("gen-q"));

    assert_eq!(
        unsafe { smv_gpu_preset(ptr::null(), &mut g) },
        SmvStatus::NullArgument
    );
    assert!(last_error().contains("name"));

    let bad = CString::new("kernel x\nphase insts=abc\n").unwrap();
    let mut w = ptr::null_mut();
    assert_eq!(
        unsafe { smv_workload_parse(bad.as_ptr(), &mut w) },
        SmvStatus::Parse
    );
    assert!(last_error().starts_with("line 2"), "{}", last_error());

    let huge = workload(
        "kernel h\ntotal_threads 256\nphase insts=4 regs=8 smem=60000 mem_ratio=0 barrier=0\n",
    );
    let g = gpu("gen-b");
    let mut r = SmvSimResult::default();
    let s = unsafe { smv_simulate(huge, g, SmvPolicy::Baseline, ptr::null(), &mut r) };
    assert_eq!(s, SmvStatus::Unschedulable);
    assert_eq!(r, SmvSimResult::default());
    unsafe {
        smv_workload_free(huge);
        smv_gpu_free(g);
    }
    assert!(!unsafe { CStr::from_ptr(smv_version()) }
        .to_bytes()
        .is_empty());
}

#[test]
fn metrics_entry_points() {
    let mut s = SmvBoxStats::default();
    let xs = [1.0, 2.0, 3.0, 4.0, 100.0];
    assert_eq!(
        unsafe { smv_tukey_stats(xs.as_ptr(), xs.len(), &mut s) },
        SmvStatus::Ok
    );
    assert_eq!(
        (s.q1, s.median, s.q3, s.mean, s.outlier_count),
        (2.0, 3.0, 4.0, 22.0, 1)
    );
    assert_eq!(
        unsafe { smv_tukey_stats(ptr::null(), 0, &mut s) },
        SmvStatus::InvalidArgument
    );
    assert_eq!(
        unsafe { smv_tukey_stats(ptr::null(), 3, &mut s) },
        SmvStatus::NullArgument
    );

    let mut range = 0.0;
    let c = [10u64, 12, 25];
    assert_eq!(
        unsafe { smv_performance_range(c.as_ptr(), 3, &mut range) },
        SmvStatus::Ok
    );
    assert!((range - 0.6).abs() < 1e-12);
    let zero = [10u64, 0];
    assert_eq!(
        unsafe { smv_performance_range(zero.as_ptr(), 2, &mut range) },
        SmvStatus::InvalidArgument
    );

    let (src, dst) = ([100u64, 102, 150], [200u64, 120, 130]);
    let mut loss = 0.0;
    assert_eq!(
        unsafe { smv_porting_loss(src.as_ptr(), dst.as_ptr(), 3, 0.05, &mut loss) },
        SmvStatus::Ok
    );
    assert!((loss - 0.4).abs() < 1e-12);
}

#[test]
fn sweep_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("s.toml");
    std::fs::write(
        &cfg,
        "block_sizes = [64, 128]\npresets = [\"gen-b\"]\n[[generate]]\ntemplate = \"mixed\"\nseed = 4\ntotal_threads = 1024\n",
    )
    .unwrap();
    let cfg = CString::new(cfg.to_str().unwrap()).unwrap();
    let out = CString::new(dir.path().join("out").to_str().unwrap()).unwrap();
    let mut rows = 0usize;
    assert_eq!(
        unsafe { smv_run_sweep(cfg.as_ptr(), out.as_ptr(), 2, &mut rows) },
        SmvStatus::Ok
    );
    assert_eq!(rows, 6);
    assert!(dir.path().join("out/results.csv").exists());
    assert!(dir.path().join("out/summary.json").exists());

    let missing = CString::new(dir.path().join("none.toml").to_str().unwrap()).unwrap();
    assert_eq!(
        unsafe { smv_run_sweep(missing.as_ptr(), ptr::null(), 0, ptr::null_mut()) },
        SmvStatus::Io
    );
}

// `cargo test` refreshes the staticlib under target/<profile>/deps; the copy
// one level up is only updated by `cargo build`.
fn staticlib() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    let deps = exe.parent().unwrap();
    std::fs::read_dir(deps)
        .unwrap()
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let name = p.file_name().unwrap().to_string_lossy();
            name.starts_with("libsmvirt_ffi") && name.ends_with(".a")
        })
        .max_by_key(|p| p.metadata().and_then(|m| m.modified()).ok())
        .expect("staticlib built alongside the tests")
}

#[test]
fn c_program_links_against_the_header() {
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR"));
    let lib = staticlib();
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("smoke");
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let status = Command::new(&cc)
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(manifest.join("tests/c/smoke.c"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .expect("a C compiler is available");
    assert!(status.success(), "linking {} failed", lib.display());
    let out = Command::new(&exe).output().unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("ok "));
}
