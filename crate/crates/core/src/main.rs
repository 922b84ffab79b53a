use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use smvirt::engine::{simulate, PolicyKind};
use smvirt::phasegen::{
    generate_workload, identify_phases, parse_trace, GeneratorTemplate, PhaseParams,
};
use smvirt::sweep::{run_sweep, write_outputs, SweepConfig};
use smvirt::workload::{
    arch_preset, parse_workload, serialize_workload, KernelProgram, SmemScope, WorkloadSpec,
    DEFAULT_THREADS_PER_BLOCK,
};
use smvirt::{CoordinatorParams, Error, Result};

#[derive(Parser)]
#[command(
    name = "smvirt",
    version,
    about = "SM resource virtualization simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a sweep described by a TOML config and write results.csv and summary.json.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the config's worker count.
        #[arg(long)]
        parallelism: Option<usize>,
    },
    /// Write a synthetic workload file.
    Generate {
        /// compute-heavy, scratchpad-burst, barrier-heavy or mixed
        #[arg(long)]
        template: String,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        total_threads: Option<u64>,
    },
    /// Segment an instruction trace into phases and print a workload file.
    Phases {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long, default_value_t = 0.25)]
        delta: f64,
        #[arg(long, default_value_t = 8)]
        min_len: u32,
        #[arg(long, default_value = "traced")]
        name: String,
        #[arg(long, default_value_t = 1024)]
        total_threads: u64,
        /// Write here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate one workload file on one preset.
    Simulate {
        #[arg(long)]
        workload: PathBuf,
        #[arg(long, default_value = "gen-b")]
        preset: String,
        #[arg(long, default_value = "baseline")]
        policy: String,
    },
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            config,
            out,
            parallelism,
        } => {
            let mut cfg = SweepConfig::load(&config)?;
            if let Some(p) = parallelism {
                cfg.parallelism = p;
            }
            let dir = out.unwrap_or_else(|| cfg.output_dir.clone());
            let kernels = cfg.kernels()?;
            let output = run_sweep(&cfg, &kernels)?;
            write_outputs(&output, &dir)?;
            eprintln!(
                "{} simulations written to {}",
                output.rows.len(),
                dir.display()
            );
        }
        Command::Generate {
            template,
            seed,
            out,
            total_threads,
        } => {
            let mut t = GeneratorTemplate::new(template.parse()?, seed);
            if let Some(n) = total_threads {
                t.total_threads = n;
            }
            let w = generate_workload(&t)?;
            write(&out, &serialize_workload(&w))?;
        }
        Command::Phases {
            trace,
            delta,
            min_len,
            name,
            total_threads,
            out,
        } => {
            let params = PhaseParams { delta, min_len };
            params.validate()?;
            let records = parse_trace(&read(&trace)?)?;
            let kernel = KernelProgram {
                name,
                phases: identify_phases(&records, &params),
                total_threads,
                smem_scope: SmemScope::Block,
            };
            kernel.validate()?;
            let text =
                serialize_workload(&WorkloadSpec::declared(kernel, DEFAULT_THREADS_PER_BLOCK));
            match out {
                Some(path) => write(&path, &text)?,
                None => emit(&text),
            }
        }
        Command::Simulate {
            workload,
            preset,
            policy,
        } => {
            let gpu = arch_preset(&preset)?;
            let w = parse_workload(&read(&workload)?)?;
            let policy = PolicyKind::from_name(&policy, CoordinatorParams::default())?;
            let r = simulate(&w, &gpu, policy)?;
            emit(&format!("{}\n", serde_json::to_string_pretty(&r)?));
        }
    }
    Ok(())
}

/// Writes to stdout; a closed pipe (`| head`) is not an error.
fn emit(text: &str) {
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
