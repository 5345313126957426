//! `bhplab`: runs one experiment config and writes its CSV.

use anyhow::{Context, Result};
use bhplab::experiments::{self, write_csv, ExperimentKind, ExperimentSpec};
use clap::{Args, Parser, Subcommand};
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

#[derive(Parser, Debug)]
#[command(name = "bhplab", version, about = "Half-space jump-process experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Killing constant along a p grid
    Constant(Common),
    /// Residual of the operator identity for the power function
    OperatorCheck(Common),
    /// Sampled checks of the kernel assumptions
    KernelAudit(Common),
    /// Occupation-integral exponent fit
    Occupation(Common),
    /// Exit-probability exponent fit
    ExitProb(Common),
    /// Exit-time scaling law
    ScalingCheck(Common),
    /// Boundary ratio boundedness
    BhpRatio(Common),
    /// Exponent separation of the concentrated-payoff counterexample
    BhpFailure(Common),
}

#[derive(Args, Debug)]
struct Common {
    /// TOML experiment config
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores)
    #[arg(long, env = "BHPLAB_THREADS")]
    threads: Option<usize>,
    /// CSV destination; overrides `output_path`, stdout if neither is set
    #[arg(long)]
    out: Option<PathBuf>,
    /// Omit the timestamp line so reruns are byte-identical
    #[arg(long)]
    deterministic: bool,
}

impl Command {
    fn split(&self) -> (ExperimentKind, &Common) {
        match self {
            Command::Constant(c) => (ExperimentKind::ConstantTable, c),
            Command::OperatorCheck(c) => (ExperimentKind::OperatorResidual, c),
            Command::KernelAudit(c) => (ExperimentKind::KernelAudit, c),
            Command::Occupation(c) => (ExperimentKind::OccupationScaling, c),
            Command::ExitProb(c) => (ExperimentKind::ExitProbScaling, c),
            Command::ScalingCheck(c) => (ExperimentKind::ExitTimeScaling, c),
            Command::BhpRatio(c) => (ExperimentKind::BhpRatio, c),
            Command::BhpFailure(c) => (ExperimentKind::BhpFailure, c),
        }
    }
}

fn execute(kind: ExperimentKind, args: &Common) -> Result<bool> {
    if let Some(n) = args.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the worker pool")?;
    }
    let mut spec = ExperimentSpec::from_file(&args.config)?.with_default_kind(kind)?;
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let output = experiments::run(&spec)?;
    let preamble = (!args.deterministic).then(|| {
        let secs = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
        format!("bhplab {} {} unix-time {secs}", env!("CARGO_PKG_VERSION"), kind)
    });
    let verdict = format!(
        "{} {}: {}",
        kind,
        if output.verdict.passed { "PASS" } else { "FAIL" },
        output.verdict.summary
    );
    match args.out.as_ref().or(spec.output_path.as_ref()) {
        Some(path) => {
            let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
            let mut w = BufWriter::new(file);
            write_csv(&output.rows, preamble.as_deref(), &mut w)?;
            w.flush()?;
            println!("{verdict}");
        }
        None => {
            write_csv(&output.rows, preamble.as_deref(), io::stdout().lock())?;
            eprintln!("{verdict}");
        }
    }
    Ok(output.verdict.passed)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, args) = cli.command.split();
    match execute(kind, args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
