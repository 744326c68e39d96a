use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use kefam_cli::{run, CliError, Command, ExperimentConfig, Overrides};

#[derive(Parser)]
#[command(name = "kefam", version, about = "Kähler–Einstein family experiments")]
struct Args {
    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides the configuration).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Slice grid resolution (replaces the configured list).
    #[arg(long, global = true)]
    resolution: Option<usize>,
    /// Fefferman level of the background.
    #[arg(long, global = true)]
    level: Option<usize>,
    /// Newton tolerance.
    #[arg(long, global = true)]
    tol: Option<f64>,
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand, Clone, Copy)]
enum Sub {
    /// Vanishing orders of the approximate defining functions.
    Fefferman,
    /// Solve the slice equation and dump the correction fields.
    SolveSlice,
    /// Geodesic curvature and related quantities on a sample net.
    FamilyScan,
    /// Smallest Hessian eigenvalue of the family metric potential.
    PshCheck,
    /// Lift flows, envelope check and holomorphy defect.
    Flow,
    /// Monotonicity of the sublevel exhaustion.
    Exhaustion,
    /// Aggregate the verdicts in the output directory.
    Report,
}

impl From<Sub> for Command {
    fn from(s: Sub) -> Self {
        match s {
            Sub::Fefferman => Command::Fefferman,
            Sub::SolveSlice => Command::SolveSlice,
            Sub::FamilyScan => Command::FamilyScan,
            Sub::PshCheck => Command::PshCheck,
            Sub::Flow => Command::Flow,
            Sub::Exhaustion => Command::Exhaustion,
            Sub::Report => Command::Report,
        }
    }
}

fn config(args: &Args, command: Command) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None if command == Command::Report => ExperimentConfig::for_family("ball_family", Default::default()),
        None => return Err(CliError::invalid("--config", "required for this subcommand")),
    };
    cfg.apply(&Overrides {
        out: args.out.clone(),
        seed: args.seed,
        resolution: args.resolution,
        level: args.level,
        tol: args.tol,
    });
    Ok(cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("KEFAM_LOG", "warn")).init();
    let args = Args::parse();
    let command = Command::from(args.command);
    let result = config(&args, command).and_then(|cfg| run(&cfg, command, args.workers));
    match result {
        Ok(v) => {
            let failed: Vec<&str> = v.checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect();
            println!("{}: {}", v.command, if v.pass { "pass" } else { "FAIL" });
            for name in &failed {
                println!("  failed: {name}");
            }
            if v.pass {
                ExitCode::SUCCESS
            } else {
                let e = CliError::VerdictFailed { failed: failed.len() };
                ExitCode::from(e.exit_code() as u8)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
