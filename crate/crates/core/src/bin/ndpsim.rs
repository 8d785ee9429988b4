use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ndpsim::config::{load_config, Mechanism, SimConfig};
use ndpsim::engine::{compare, run, speedup_csv, warmup};
use ndpsim::pagetable::occupancy_csv;
use ndpsim::report::RunReport;
use ndpsim::trace::{generate, parse_trace, write_trace, GeneratorKind, GeneratorSpec, TraceRecord, DEFAULT_BASE};

#[derive(Parser)]
#[command(
    name = "ndpsim",
    version,
    about = "Address translation simulator for near-data processing cores"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic trace.
    Gen {
        #[arg(long, value_enum)]
        kind: GeneratorKind,
        /// Footprint per core, in 4KB pages.
        #[arg(long)]
        pages: u64,
        /// Accesses per core.
        #[arg(long)]
        accesses: u64,
        #[arg(long, default_value_t = 1)]
        cores: u16,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.99)]
        zipf_s: f64,
        #[arg(long, default_value_t = 0.5)]
        write_fraction: f64,
        #[arg(long, value_parser = parse_u64, default_value_t = DEFAULT_BASE)]
        base: u64,
        /// Every core replays the same address sequence.
        #[arg(long)]
        replicate: bool,
        /// All cores share one footprint instead of private regions.
        #[arg(long)]
        shared: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate one configuration and write a JSON report.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate several mechanisms on one trace and write a speedup table.
    Compare {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        trace: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "radix,flat,huge,ndpage,ideal")]
        mechanisms: Vec<Mechanism>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Warm up the page tables and write per-level occupancy.
    Occupancy {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_u64(s: &str) -> Result<u64, String> {
    let r = match s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        Some(hex) => u64::from_str_radix(&hex.replace('_', ""), 16),
        None => s.replace('_', "").parse(),
    };
    r.map_err(|e| e.to_string())
}

struct Failure {
    stage: &'static str,
    message: String,
}

fn fail(stage: &'static str) -> impl FnOnce(ndpsim::Error) -> Failure {
    move |e| Failure {
        stage,
        message: e.to_string(),
    }
}

fn read(stage: &'static str, path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure {
        stage,
        message: format!("{}: {e}", path.display()),
    })
}

fn write(path: &Path, contents: &str) -> Result<(), Failure> {
    fs::write(path, contents).map_err(|e| Failure {
        stage: "output",
        message: format!("{}: {e}", path.display()),
    })
}

fn inputs(config: &Path, trace: &Path) -> Result<(SimConfig, Vec<TraceRecord>), Failure> {
    let config = load_config(&read("config", config)?).map_err(|e| fail("config")(e.into()))?;
    let trace = parse_trace(&read("parse", trace)?).map_err(|e| fail("parse")(e.into()))?;
    Ok((config, trace))
}

fn execute(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Gen {
            kind,
            pages,
            accesses,
            cores,
            seed,
            zipf_s,
            write_fraction,
            base,
            replicate,
            shared,
            out,
        } => {
            let mut spec = GeneratorSpec::new(kind, pages, accesses);
            spec.cores = cores;
            spec.seed = seed;
            spec.zipf_s = zipf_s;
            spec.write_fraction = write_fraction;
            spec.base = base;
            spec.replicate = replicate;
            spec.shared_footprint = shared;
            let records = generate(&spec).map_err(|e| fail("gen")(e.into()))?;
            write(&out, &write_trace(&records))
        }
        Command::Run { config, trace, out } => {
            let (config, trace) = inputs(&config, &trace)?;
            let stats = run(&config, &trace).map_err(fail("run"))?;
            write(&out, &RunReport::new(config, stats).to_json())
        }
        Command::Compare {
            config,
            trace,
            mechanisms,
            out,
        } => {
            let (config, trace) = inputs(&config, &trace)?;
            let configs = mechanisms
                .iter()
                .map(|&m| config.with_mechanism(m))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| fail("config")(e.into()))?;
            let rows = compare(&configs, &trace).map_err(fail("run"))?;
            write(&out, &speedup_csv(&rows))
        }
        Command::Occupancy { config, trace, out } => {
            let (config, trace) = inputs(&config, &trace)?;
            let pt = warmup(&config, &trace).map_err(fail("run"))?;
            write(&out, &occupancy_csv(&pt.occupancy_report()))
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("ndpsim: {} failed: {}", f.stage, f.message);
            ExitCode::FAILURE
        }
    }
}
