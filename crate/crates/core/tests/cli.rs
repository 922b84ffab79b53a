use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use smvirt::metrics::{read_csv, Summary};
use smvirt::parse_workload;

fn smvirt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_smvirt"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("sweep.toml");
    fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

const SMALL: &str = r#"
block_sizes = [64, 128, 192, 256]
presets = ["gen-b"]

[[generate]]
template = "scratchpad-burst"
seed = 5
total_threads = 2048
"#;

#[test]
fn run_writes_one_row_per_point() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL);
    let out = smvirt(&["run", "--config", &config]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let rows = read_csv(fs::File::open(dir.path().join("results/results.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 12);
    let summary: Summary =
        serde_json::from_str(&fs::read_to_string(dir.path().join("results/summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary.sweeps.len(), 3);
    assert!(summary.porting.is_empty());
}

#[test]
fn output_is_identical_across_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        r#"
block_sizes = [64, 128, 256]
presets = ["gen-a", "gen-b"]

[[generate]]
template = "mixed"
seed = 9
total_threads = 2048

[[generate]]
template = "barrier-heavy"
seed = 9
total_threads = 2048
"#,
    );
    let mut outputs = Vec::new();
    for p in ["1", "8", "1"] {
        let out_dir = dir.path().join(format!("out-{}", outputs.len()));
        let out = smvirt(&[
            "run",
            "--config",
            &config,
            "--parallelism",
            p,
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
        outputs.push((
            fs::read(out_dir.join("results.csv")).unwrap(),
            fs::read(out_dir.join("summary.json")).unwrap(),
        ));
    }
    assert!(outputs.windows(2).all(|w| w[0] == w[1]));

    let summary: Summary = serde_json::from_slice(&outputs[0].1).unwrap();
    for kernel in ["mixed-9", "barrier-9"] {
        for policy in ["baseline", "wlm", "zorua"] {
            let n = summary
                .porting
                .iter()
                .filter(|p| p.kernel == kernel && p.policy == policy)
                .count();
            assert_eq!(n, 2, "{kernel} {policy}");
            assert!(summary.porting_max(kernel, policy).is_some());
        }
    }
}

#[test]
fn failing_point_is_named() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("huge.wl"),
        "kernel huge\ntotal_threads 512\nphase insts=10 regs=16 smem=60000 mem_ratio=0 barrier=0\n",
    )
    .unwrap();
    let config = write_config(
        dir.path(),
        "workloads = [\"huge.wl\"]\nblock_sizes = [128]\npresets = [\"gen-b\"]\npolicies = [\"baseline\"]\n",
    );
    let out = smvirt(&["run", "--config", &config]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    for part in ["huge", "gen-b", "baseline", "128", "unschedulable"] {
        assert!(err.contains(part), "missing `{part}` in {err}");
    }
    assert!(!dir.path().join("results").exists());

    let out = smvirt(&[
        "run",
        "--config",
        dir.path().join("missing.toml").to_str().unwrap(),
    ]);
    assert!(!out.status.success());
}

#[test]
fn generate_then_phases() {
    let dir = tempfile::tempdir().unwrap();
    let wl = dir.path().join("g.wl");
    let args = [
        "generate",
        "--template",
        "barrier-heavy",
        "--seed",
        "3",
        "--out",
        wl.to_str().unwrap(),
    ];
    assert!(smvirt(&args).status.success());
    let first = fs::read(&wl).unwrap();
    assert!(smvirt(&args).status.success());
    assert_eq!(fs::read(&wl).unwrap(), first);
    let w = parse_workload(&String::from_utf8(first).unwrap()).unwrap();
    assert_eq!(w.kernel.name, "barrier-3");

    let trace = dir.path().join("t.trace");
    let mut text = String::new();
    for i in 0..60 {
        let regs = if i < 30 { 12 } else { 48 };
        text.push_str(
            &format!("{regs} 0 {} {}\n", i % 5 == 0, i == 59)
                .replace("true", "1")
                .replace("false", "0"),
        );
    }
    fs::write(&trace, text).unwrap();
    let out = smvirt(&["phases", "--trace", trace.to_str().unwrap(), "--name", "t"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let w = parse_workload(&String::from_utf8(out.stdout).unwrap()).unwrap();
    let shape: Vec<(u32, u32, bool)> = w
        .kernel
        .phases
        .iter()
        .map(|p| (p.insts, p.regs, p.ends_with_barrier))
        .collect();
    assert_eq!(shape, [(30, 12, false), (30, 48, true)]);

    let out = smvirt(&[
        "generate",
        "--template",
        "bogus",
        "--seed",
        "1",
        "--out",
        wl.to_str().unwrap(),
    ]);
    assert!(!out.status.success());
}
