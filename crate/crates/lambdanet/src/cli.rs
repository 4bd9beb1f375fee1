//! Command-line front end. Exit codes: 0 success, 1 configuration error,
//! 2 invariant violation.

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use lambdanet_core::protocol::ControlPolicy;
use lambdanet_core::simkernel::SimError;
use lambdanet_core::workload::{Arrival, Endpoints};
use lambdanet_core::{Mode, SimConfig, SimTime, TimingConfig, WorkloadSpec};

use crate::report::{emit_table, write_csv, Cell, ReportError, RunRecord};
use crate::sweep::{benchmark_grid, run_cells, Scenario, SweepError};
use crate::topology_doc::load_topology;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    ProposedConnection,
    ProposedDatagram,
    Baseline,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::ProposedConnection => Mode::ProposedConnection,
            ModeArg::ProposedDatagram => Mode::ProposedDatagram,
            ModeArg::Baseline => Mode::Baseline,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Table,
    Csv,
}

/// Simulate control-wavelength routing in a WDM all-optical network.
#[derive(Debug, Parser)]
#[command(name = "lambdanet", version)]
pub struct Args {
    /// `single-switch`, `ring5`, or a .json/.toml topology file.
    #[arg(long, default_value = "single-switch")]
    pub topology: String,
    #[arg(long, default_value_t = 4)]
    pub wavelengths: usize,
    /// Control wavelengths per link.
    #[arg(long, default_value_t = 1)]
    pub control: usize,
    #[arg(long, default_value_t = 1)]
    pub parallelism: usize,
    #[arg(long, value_enum, default_value_t = ModeArg::ProposedConnection)]
    pub mode: ModeArg,
    #[arg(long, default_value_t = 100)]
    pub requests: u32,
    /// Flits per request.
    #[arg(long, default_value_t = 100)]
    pub flits: u32,
    /// Poisson arrivals at this many requests per μs instead of all at time zero.
    #[arg(long)]
    pub arrival_rate: Option<f64>,
    /// Uniformly random source/destination pairs instead of one fixed pair.
    #[arg(long)]
    pub random_endpoints: bool,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Number of consecutive seeds, starting at --seed.
    #[arg(long, default_value_t = 1)]
    pub seeds: u64,
    #[arg(long, default_value_t = 1.0)]
    pub prop_delay_us: f64,
    #[arg(long, default_value_t = 2.0)]
    pub proc_time_us: f64,
    #[arg(long, default_value_t = 1.0)]
    pub flit_cycle_us: f64,
    /// Resize control sets with the request queue length.
    #[arg(long)]
    pub dynamic_control: bool,
    /// Also write CSV to this file.
    #[arg(long, value_name = "PATH")]
    pub csv: Option<PathBuf>,
    /// Run the 3 × 4 × 2 benchmark grid instead of a single configuration.
    #[arg(long = "paper-sweep")]
    pub benchmark_sweep: bool,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    pub format: Format,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Usage(#[from] clap::Error),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("invariant violation: {0}")]
    Invariant(String),
    #[error("io: {0}")]
    Io(#[from] io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(e) if !e.use_stderr() => 0,
            CliError::Invariant(_) => 2,
            _ => 1,
        }
    }
}

impl From<SweepError> for CliError {
    fn from(e: SweepError) -> Self {
        match e {
            SweepError::Sim(SimError::InvariantViolation(why)) => CliError::Invariant(why),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<ReportError> for CliError {
    fn from(e: ReportError) -> Self {
        match e {
            ReportError::Io(e) => CliError::Io(e),
            other => CliError::Config(other.to_string()),
        }
    }
}

fn micros(flag: &str, v: f64) -> Result<SimTime, CliError> {
    SimTime::from_micros_f64(v).ok_or_else(|| CliError::Config(format!("--{flag} must be a non-negative number")))
}

impl Args {
    pub fn scenario(&self) -> Result<Scenario, CliError> {
        let graph = load_topology(&self.topology).map_err(|e| CliError::Config(e.to_string()))?;
        let timing = TimingConfig {
            propagation_delay: micros("prop-delay-us", self.prop_delay_us)?,
            switch_processing: micros("proc-time-us", self.proc_time_us)?,
            flit_cycle: micros("flit-cycle-us", self.flit_cycle_us)?,
            ..TimingConfig::default()
        };
        let base = SimConfig {
            wavelengths: self.wavelengths,
            control: self.control,
            parallelism: self.parallelism,
            mode: self.mode.into(),
            timing,
            dynamic_control: self.dynamic_control.then(ControlPolicy::default),
            seed: self.seed,
            ..SimConfig::default()
        };
        if self.seeds == 0 {
            return Err(CliError::Config("--seeds must be at least 1".into()));
        }
        let workload = WorkloadSpec {
            request_count: self.requests,
            flits_per_request: self.flits,
            arrival: self.arrival_rate.map_or(Arrival::AllAtZero, |rate| Arrival::Poisson { rate }),
            endpoints: if self.random_endpoints { Endpoints::UniformRandom } else { Endpoints::SingleSwitchPair },
            seed: self.seed,
        };
        Ok(Scenario { graph, workload, base })
    }

    pub fn cells(&self) -> Vec<Cell> {
        if self.benchmark_sweep {
            return benchmark_grid();
        }
        vec![Cell {
            wavelengths: self.wavelengths,
            control: self.control,
            parallelism: self.parallelism,
            mode: self.mode.into(),
        }]
    }

    pub fn seed_list(&self) -> Vec<u64> {
        (0..self.seeds).map(|i| self.seed.wrapping_add(i)).collect()
    }
}

/// Parses `argv` (program name first), runs, and writes the report to `out`.
pub fn run_cli<I, T>(argv: I, out: &mut dyn Write) -> Result<Vec<RunRecord>, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args = Args::try_parse_from(argv)?;
    let scenario = args.scenario()?;
    // fail fast on flag combinations before spawning workers
    for cell in args.cells() {
        let cfg = SimConfig {
            wavelengths: cell.wavelengths,
            control: cell.control,
            parallelism: cell.parallelism,
            mode: cell.mode,
            ..scenario.base
        };
        cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
    }
    let records = run_cells(&scenario, &args.cells(), &args.seed_list())?;
    if let Some(path) = &args.csv {
        write_csv(&records, File::create(path)?)?;
    }
    match args.format {
        Format::Csv => write_csv(&records, &mut *out)?,
        Format::Table => {
            out.write_all(emit_table(&records)?.as_bytes())?;
            if !args.benchmark_sweep {
                writeln!(out)?;
                for r in &records {
                    let m = &r.metrics;
                    writeln!(
                        out,
                        "seed {}: makespan {} μs, delivered {}/{} flits, {} discarded requests, \
                         {} dropped datagrams, {} O/E conversions, {} wavelength conversions",
                        r.seed,
                        m.makespan,
                        m.delivered_flits,
                        m.injected_flits,
                        m.discarded_requests,
                        m.dropped_datagrams,
                        m.oe_conversions,
                        m.wavelength_conversions
                    )?;
                }
            }
        }
    }
    Ok(records)
}

pub fn main_entry() -> ExitCode {
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match run_cli(std::env::args_os(), &mut out) {
        Ok(_) => ExitCode::SUCCESS,
        Err(CliError::Usage(e)) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            ExitCode::from(code)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
