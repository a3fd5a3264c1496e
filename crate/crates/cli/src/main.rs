use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use levy_potential::{Error, ExperimentConfig};
use levy_potential_cli::{commands, Outcome, Sink};

/// Green functions and gradient perturbations of 1-D Lévy processes.
#[derive(Parser)]
#[command(name = "levypot", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML experiment file; a stable α=1.5 process on (−1, 1) when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, overriding the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// RNG seed for MC runs and random checks.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Nyström grid size.
    #[arg(long, global = true)]
    grid: Option<usize>,
    /// Worker threads; all cores when absent.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Kernel table and invariant checks.
    Kernels,
    /// Green function values and estimate checks.
    Green,
    /// Perturbed Green function and comparability report.
    Perturb,
    /// Monte Carlo exit times, occupation densities and exit laws.
    Mc,
    /// Kato-class certificate of the configured drift.
    Kato,
    /// All acceptance criteria.
    Report,
}

const DEFAULT_CONFIG: &str = "[model]\nfamily = \"stable\"\nalpha = 1.5\n\n[domain]\nintervals = [[-1.0, 1.0]]\n";

fn load(cli: &Cli) -> Result<ExperimentConfig, Error> {
    let text = match &cli.config {
        Some(p) => std::fs::read_to_string(p).map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?,
        None => DEFAULT_CONFIG.to_string(),
    };
    let mut cfg = ExperimentConfig::from_toml(&text)?;
    if let Some(seed) = cli.seed {
        cfg.mc.path.seed = seed;
    }
    if let Some(n) = cli.grid {
        cfg.grid.nystrom = n;
    }
    if let Some(out) = &cli.out {
        cfg.output.dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<Outcome, Error> {
    let cfg = load(cli)?;
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    let sink = Sink::new(&cfg.output.dir, &cfg)?;
    match cli.command {
        Command::Kernels => commands::cmd_kernels(&cfg, &sink),
        Command::Green => commands::cmd_green(&cfg, &sink),
        Command::Perturb => commands::cmd_perturb(&cfg, &sink),
        Command::Mc => commands::cmd_mc(&cfg, &sink),
        Command::Kato => commands::cmd_kato(&cfg, &sink),
        Command::Report => commands::cmd_report(&cfg, &sink),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(out) => {
            for line in &out.lines {
                println!("{line}");
            }
            for f in &out.files {
                println!("wrote {}", f.display());
            }
            if out.pass {
                ExitCode::SUCCESS
            } else {
                eprintln!("{}: check failed", out.command);
                ExitCode::from(1)
            }
        }
        Err(e @ Error::Config(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
