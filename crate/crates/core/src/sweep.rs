//! Sweep orchestration: (kernel x preset x policy x block size) runs on a
//! bounded worker pool, sorted before emission so output bytes never depend
//! on scheduling.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coordinator::CoordinatorParams;
use crate::engine::{simulate, PolicyKind};
use crate::error::{Error, Result};
use crate::metrics::{self, ResultRow, Summary, SweepResult};
use crate::phasegen::{generate_workload, Archetype, GeneratorTemplate};
use crate::workload::{arch_preset, parse_workload, KernelProgram, WorkloadSpec};

/// A generator invocation inside a sweep config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateEntry {
    pub template: String,
    pub seed: u64,
    #[serde(default)]
    pub total_threads: Option<u64>,
}

fn default_policies() -> Vec<String> {
    vec!["baseline".into(), "wlm".into(), "zorua".into()]
}

fn default_presets() -> Vec<String> {
    vec!["gen-a".into(), "gen-b".into(), "gen-c".into()]
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}

fn default_parallelism() -> usize {
    1
}

fn default_margin() -> f64 {
    0.05
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// Workload files; relative paths resolve against the config's directory.
    #[serde(default)]
    pub workloads: Vec<PathBuf>,
    #[serde(default)]
    pub generate: Vec<GenerateEntry>,
    pub block_sizes: Vec<u32>,
    #[serde(default = "default_policies")]
    pub policies: Vec<String>,
    #[serde(default = "default_presets")]
    pub presets: Vec<String>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default = "default_margin")]
    pub margin: f64,
    #[serde(default)]
    pub coordinator: CoordinatorParams,
}

impl SweepConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: SweepConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file and resolves its relative paths.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for w in &mut cfg.workloads {
            if w.is_relative() {
                *w = base.join(&*w);
            }
        }
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |m: &str| Err(Error::Config(m.to_string()));
        if self.workloads.is_empty() && self.generate.is_empty() {
            return cfg_err("no workloads or generate entries");
        }
        if self.block_sizes.is_empty() || self.policies.is_empty() || self.presets.is_empty() {
            return cfg_err("block_sizes, policies and presets must be non-empty");
        }
        if self.parallelism == 0 {
            return cfg_err("parallelism must be >= 1");
        }
        if !(0.0..1.0).contains(&self.margin) {
            return cfg_err("margin must be in [0, 1)");
        }
        let mut seen = BTreeSet::new();
        for &tpb in &self.block_sizes {
            if !seen.insert(tpb) {
                return Err(Error::Config(format!("duplicate block size {tpb}")));
            }
        }
        for preset in &self.presets {
            let gpu = arch_preset(preset)?;
            for &tpb in &self.block_sizes {
                if tpb == 0 || tpb % gpu.warp_size != 0 {
                    return Err(Error::Config(format!(
                        "block size {tpb} is not a multiple of warp size {}",
                        gpu.warp_size
                    )));
                }
            }
        }
        for p in &self.policies {
            PolicyKind::from_name(p, self.coordinator)?;
        }
        self.coordinator.validate().map_err(Error::Config)?;
        for g in &self.generate {
            g.template.parse::<Archetype>()?;
        }
        Ok(())
    }

    /// Loads workload files and runs the generator entries.
    pub fn kernels(&self) -> Result<Vec<KernelProgram>> {
        let mut out = Vec::new();
        for path in &self.workloads {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let w = parse_workload(&text).map_err(|e| match e {
                Error::Syntax { line, msg } => {
                    Error::Config(format!("{}:{line}: {msg}", path.display()))
                }
                other => Error::Config(format!("{}: {other}", path.display())),
            })?;
            out.push(w.kernel);
        }
        for g in &self.generate {
            let mut t = GeneratorTemplate::new(g.template.parse()?, g.seed);
            if let Some(n) = g.total_threads {
                t.total_threads = n;
            }
            out.push(generate_workload(&t)?.kernel);
        }
        let mut names = BTreeSet::new();
        for k in &out {
            if !names.insert(k.name.as_str()) {
                return Err(Error::Config(format!("duplicate kernel name `{}`", k.name)));
            }
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepOutput {
    /// Sorted by (kernel, preset, policy, threads_per_block).
    pub rows: Vec<ResultRow>,
    pub sweeps: Vec<SweepResult>,
    pub summary: Summary,
}

struct Job<'a> {
    kernel: &'a KernelProgram,
    preset: &'a str,
    policy: PolicyKind,
    tpb: u32,
}

fn run_job(job: &Job) -> Result<ResultRow> {
    let gpu = arch_preset(job.preset)?;
    let workload = WorkloadSpec::declared(job.kernel.clone(), job.tpb);
    let wrap = |e: Error| Error::SweepPoint {
        kernel: job.kernel.name.clone(),
        preset: job.preset.to_string(),
        policy: job.policy.name().to_string(),
        spec: workload.spec.to_string(),
        source: Box::new(e),
    };
    let r = simulate(&workload, &gpu, job.policy).map_err(wrap)?;
    Ok(ResultRow {
        kernel: job.kernel.name.clone(),
        arch: job.preset.to_string(),
        policy: job.policy.name().to_string(),
        threads_per_block: workload.spec.threads_per_block,
        regs_per_thread: workload.spec.regs_per_thread,
        smem_per_block: workload.spec.smem_per_block,
        total_cycles: r.total_cycles,
        issue_util: r.issue_util,
        swap_stall_cycles: r.swap_stall_cycles,
    })
}

/// Simulates every point of the sweep and derives the summary.
pub fn run_sweep(config: &SweepConfig, kernels: &[KernelProgram]) -> Result<SweepOutput> {
    config.validate()?;
    let mut jobs = Vec::new();
    for kernel in kernels {
        for preset in &config.presets {
            for policy in &config.policies {
                for &tpb in &config.block_sizes {
                    jobs.push(Job {
                        kernel,
                        preset,
                        policy: PolicyKind::from_name(policy, config.coordinator)?,
                        tpb,
                    });
                }
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.parallelism)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let results: Vec<Result<ResultRow>> = pool.install(|| jobs.par_iter().map(run_job).collect());
    let mut rows = results.into_iter().collect::<Result<Vec<_>>>()?;
    metrics::sort_rows(&mut rows);
    let sweeps = metrics::sweeps_from_rows(&rows);
    let summary = metrics::summarize(&sweeps, config.margin)?;
    Ok(SweepOutput {
        rows,
        sweeps,
        summary,
    })
}

/// Writes `results.csv` and `summary.json` into `dir`.
pub fn write_outputs(output: &SweepOutput, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (csv, json) = metrics::emit_report(&output.rows, &output.summary)?;
    let csv_path = dir.join("results.csv");
    fs::write(&csv_path, csv).map_err(|e| Error::io(&csv_path, e))?;
    let json_path = dir.join("summary.json");
    fs::write(&json_path, json).map_err(|e| Error::io(&json_path, e))?;
    Ok(())
}
