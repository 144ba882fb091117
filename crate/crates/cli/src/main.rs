//! `qillum`: error-probability bounds and resolution limits from the command line.

use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use qillum_core::sweep::{
    format_value, m_sweep_table, point_bounds, resolution_table, with_jobs, write_csv, GridScale, SweepVariable,
    TransmitterSelection,
};
use qillum_core::{
    m_sweep, resolution_curve, validate, ChannelParams, ExperimentConfig, SceneGeometry,
    SweepSpec,
};

const EXIT_CONFIG: u8 = 1;
const EXIT_NUMERICAL: u8 = 2;
const EXIT_VALIDATION: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "qillum", version, about = "Quantum-illumination bounds for one-versus-two target discrimination")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Chernoff bounds and receiver error probability at one operating point.
    Qcb(CommonArgs),
    /// Error-probability bounds versus the number of modes.
    SweepM(CommonArgs),
    /// Minimum resolvable separation versus SNR.
    Resolution(CommonArgs),
    /// Gaussian-versus-Fock oracle checks at an oracle-regime operating point.
    Validate(CommonArgs),
}

#[derive(Args, Debug, Clone)]
struct CommonArgs {
    /// JSON experiment configuration; a built-in default is used when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output file (default: stdout, or the config's `output`).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    transmitter: Option<TransmitterArg>,
    /// Error-probability threshold for resolution.
    #[arg(long)]
    pe_threshold: Option<f64>,
    /// Mode count; for `sweep-m` the largest mode count of the grid.
    #[arg(long)]
    modes: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum TransmitterArg {
    Coherent,
    Qi,
    Both,
}

impl From<TransmitterArg> for TransmitterSelection {
    fn from(t: TransmitterArg) -> Self {
        match t {
            TransmitterArg::Coherent => TransmitterSelection::Coherent,
            TransmitterArg::Qi => TransmitterSelection::Qi,
            TransmitterArg::Both => TransmitterSelection::Both,
        }
    }
}

/// Problems with the user's input, as opposed to numerical failures.
#[derive(Debug)]
struct ConfigError(String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn config_error(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

fn geometry(fraction: f64) -> SceneGeometry {
    SceneGeometry::from_rayleigh_fraction(1.55e-6, 0.1, fraction).expect("valid default geometry")
}

fn default_config(command: &Command) -> ExperimentConfig {
    match command {
        Command::Qcb(_) | Command::SweepM(_) => {
            let channel = ChannelParams::new(0.01, 0.01, 20.0, 1_000_000).expect("valid default");
            let mut cfg = ExperimentConfig::new(geometry(0.5), channel);
            cfg.sweep = Some(SweepSpec {
                variable: SweepVariable::Modes,
                start: 1e3,
                stop: 1e8,
                points: 26,
                scale: GridScale::Log,
            });
            cfg
        }
        Command::Resolution(_) => {
            let channel = ChannelParams::new(1e-3, 0.01, 1.0, 1_000_000).expect("valid default");
            let mut cfg = ExperimentConfig::new(geometry(0.5), channel);
            cfg.sweep = Some(SweepSpec {
                variable: SweepVariable::Snr,
                start: 1e-7,
                stop: 1e-2,
                points: 51,
                scale: GridScale::Log,
            });
            cfg.include_pc = true;
            cfg
        }
        Command::Validate(_) => {
            let channel = ChannelParams::new(0.05, 0.02, 0.2, 1).expect("valid default");
            ExperimentConfig::new(geometry(0.5), channel)
        }
    }
}

fn load_config(command: &Command, args: &CommonArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| config_error(format!("cannot read {}: {e}", path.display())))?;
            ExperimentConfig::from_json(&text)?
        }
        None => default_config(command),
    };
    if let Some(t) = args.transmitter {
        cfg.transmitter = t.into();
    }
    if let Some(p) = args.pe_threshold {
        cfg.pe_threshold = p;
    }
    if let Some(m) = args.modes {
        match command {
            Command::SweepM(_) => {
                let sweep = cfg
                    .sweep
                    .as_mut()
                    .ok_or_else(|| config_error("sweep-m needs a modes sweep in the config"))?;
                sweep.stop = m as f64;
            }
            _ => cfg.channel.m_modes = m,
        }
    }
    if let Some(out) = &args.out {
        cfg.output = Some(out.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn deliver(cfg: &ExperimentConfig, bytes: &[u8]) -> Result<()> {
    match &cfg.output {
        Some(path) => fs::write(path, bytes).with_context(|| format!("writing {}", path.display())),
        None => io::stdout().write_all(bytes).context("writing to stdout"),
    }
}

fn emit(cfg: &ExperimentConfig, header: &[String], columns: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    let mut buf = Vec::new();
    write_csv(&mut buf, header, columns, rows)?;
    deliver(cfg, &buf)
}

fn run_qcb(cfg: &ExperimentConfig) -> Result<u8> {
    let report = point_bounds(cfg)?;
    let mut text = format!(
        "# qillum qcb\n# config: {}\n# exponents are per mode; pe is at {} modes; the pc row uses the Gaussian approximation\n",
        cfg.to_json(),
        cfg.channel.m_modes
    );
    text.push_str("transmitter,s_star,q_s_star,exponent,pe\n");
    for (label, bound) in [("coherent", report.coherent), ("qi", report.qi)] {
        if let Some(b) = bound {
            let cells = [b.s_star, b.q_s_star, b.exponent, b.pe_bound].map(format_value);
            text.push_str(&format!("{label},{}\n", cells.join(",")));
        }
    }
    text.push_str(&format!(
        "qi_pc,,,{},{}\n",
        format_value(report.pc_exponent),
        format_value(report.pc_pe)
    ));
    deliver(cfg, text.as_bytes())?;
    Ok(0)
}

fn run_sweep_m(cfg: &ExperimentConfig) -> Result<u8> {
    let rows = m_sweep(cfg)?;
    let (header, columns, data) = m_sweep_table(cfg, &rows);
    emit(cfg, &header, &columns, &data)?;
    Ok(0)
}

fn run_resolution(cfg: &ExperimentConfig) -> Result<u8> {
    let rows = resolution_curve(cfg)?;
    let (header, columns, data) = resolution_table(cfg, &rows);
    emit(cfg, &header, &columns, &data)?;
    Ok(0)
}

fn run_validate(cfg: &ExperimentConfig) -> Result<u8> {
    let report = validate(cfg)?;
    let mut text = String::new();
    for c in &report.checks {
        text.push_str(&format!(
            "{} {}: residual {:.3e} (tolerance {:.1e})\n",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.residual,
            c.tolerance
        ));
    }
    deliver(cfg, text.as_bytes())?;
    Ok(if report.passed() { 0 } else { EXIT_VALIDATION })
}

fn run(cli: Cli) -> Result<u8> {
    let args = match &cli.command {
        Command::Qcb(a) | Command::SweepM(a) | Command::Resolution(a) | Command::Validate(a) => a.clone(),
    };
    let cfg = load_config(&cli.command, &args)?;
    // the oracle is memory heavy, so validation runs on one thread unless asked otherwise
    let jobs = match (&cli.command, args.jobs) {
        (Command::Validate(_), None) => Some(1),
        (_, jobs) => jobs,
    };
    with_jobs(jobs, || match &cli.command {
        Command::Qcb(_) => run_qcb(&cfg),
        Command::SweepM(_) => run_sweep_m(&cfg),
        Command::Resolution(_) => run_resolution(&cfg),
        Command::Validate(_) => run_validate(&cfg),
    })?
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<ConfigError>().is_some() {
        return EXIT_CONFIG;
    }
    match err.downcast_ref::<qillum_core::Error>() {
        Some(e) if e.is_input_error() => EXIT_CONFIG,
        _ => EXIT_NUMERICAL,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
