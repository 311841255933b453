//! `tse`: probabilities, truncated moments and tail risk of selection-elliptical laws.

mod commands;
mod job;
mod output;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Command {
    Moments,
    Prob,
    PdfGrid,
    Tce,
    Mtce,
    TceSum,
    Validate,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Moments => "moments",
            Command::Prob => "prob",
            Command::PdfGrid => "pdf-grid",
            Command::Tce => "tce",
            Command::Mtce => "mtce",
            Command::TceSum => "tce-sum",
            Command::Validate => "validate",
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "tse", version, about = "Truncated selection-elliptical moments, probabilities and tail risk")]
struct Args {
    command: Command,
    /// Job file (JSON).
    #[arg(long)]
    spec: PathBuf,
    /// Write the result here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for Monte Carlo work; overrides the job file.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; defaults to the available cores.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Debug)]
pub enum CliError {
    Input(String),
    Engine(seltrunc::Error),
    /// Analytic values disagree with the Monte Carlo oracle.
    Mismatch(String),
}

impl From<seltrunc::Error> for CliError {
    fn from(e: seltrunc::Error) -> Self {
        CliError::Engine(e)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Input(m) => write!(f, "invalid job: {m}"),
            CliError::Engine(e) => write!(f, "{e}"),
            CliError::Mismatch(m) => write!(f, "validation failed: {m}"),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        use seltrunc::Error::*;
        match self {
            CliError::Input(_) => 2,
            CliError::Engine(NonExistentMoment(_)) => 3,
            CliError::Engine(Numerical(_) | SamplerInfeasible(_)) => 4,
            CliError::Engine(_) => 2,
            CliError::Mismatch(_) => 4,
        }
    }
}

fn run(args: &Args) -> Result<(), CliError> {
    if let Some(n) = args.threads {
        if n == 0 {
            return Err(CliError::Input("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Input(e.to_string()))?;
    }
    let text = std::fs::read_to_string(&args.spec)
        .map_err(|e| CliError::Input(format!("cannot read {}: {e}", args.spec.display())))?;
    let job = job::JobSpec::parse(&text)?;
    if let Some(c) = &job.command {
        if c != args.command.name() {
            return Err(CliError::Input(format!(
                "job file is for \"{c}\" but \"{}\" was requested",
                args.command.name()
            )));
        }
    }
    let out = commands::run(args.command, &job, args.seed)?;
    let text = match &out {
        commands::Output::Json(v) => output::to_json_string(v) + "\n",
        commands::Output::Text(t) => t.clone(),
    };
    match &args.out {
        Some(path) => std::fs::write(path, text)
            .map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))?,
        None => print!("{text}"),
    }
    if let commands::Output::Json(v) = &out {
        if v.get("values").and_then(|x| x.get("all_pass")) == Some(&serde_json::Value::Bool(false)) {
            return Err(CliError::Mismatch("some analytic values fall outside 4 SE".into()));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("tse: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
