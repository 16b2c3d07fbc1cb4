use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use levy_sprt::cli::{rerun, resolve_out_dir, run, Command, Manifest};
use levy_sprt::config::Config;
use levy_sprt::Error;

/// Sequential Levy-process hypothesis tests: simulation, thresholds,
/// Monte Carlo operating characteristics, envelopes and the crude-oil
/// experiment.
#[derive(Parser)]
#[command(name = "levy-sprt", version)]
struct Cli {
    /// Maximum worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Sub,
}

#[derive(Args)]
struct Common {
    /// key = value parameter file.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override a key, e.g. `--set horizon=2`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; defaults to $LEVY_SPRT_OUT_DIR, then ./out.
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Comma-separated output formats: json, csv.
    #[arg(long)]
    format: Option<String>,
}

#[derive(Subcommand)]
enum Sub {
    /// Simulate observation or BN-S paths.
    Simulate(Common),
    /// Solve rectangle thresholds.
    Thresholds(Common),
    /// Monte Carlo operating characteristics of the rectangle rule.
    Montecarlo(Common),
    /// Super/sub-solution envelope grids and checks.
    Envelopes(Common),
    /// One-dimensional crude-oil decision experiment.
    Oil(Common),
    /// Repeat a run from its manifest.
    Rerun {
        manifest: PathBuf,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
}

fn build_config(c: &Common) -> Result<Config, Error> {
    let mut cfg = match &c.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    for kv in &c.overrides {
        cfg.apply_override(kv)?;
    }
    if let Some(s) = c.seed {
        cfg.set("seed", &s.to_string())?;
    }
    if let Some(f) = &c.format {
        cfg.set("formats", f)?;
    }
    Ok(cfg)
}

fn main_inner(cli: Cli) -> Result<PathBuf, Error> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("cannot size thread pool: {e}")))?;
    }
    let (command, common) = match &cli.command {
        Sub::Simulate(c) => (Command::Simulate, c),
        Sub::Thresholds(c) => (Command::Thresholds, c),
        Sub::Montecarlo(c) => (Command::Montecarlo, c),
        Sub::Envelopes(c) => (Command::Envelopes, c),
        Sub::Oil(c) => (Command::Oil, c),
        Sub::Rerun { manifest, out } => {
            let m = Manifest::load(manifest)?;
            let dir = resolve_out_dir(out.clone());
            rerun(&m, &dir)?;
            return Ok(dir);
        }
    };
    let cfg = build_config(common)?;
    let dir = resolve_out_dir(common.out.clone());
    run(command, &cfg, &dir)?;
    Ok(dir)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match main_inner(cli) {
        Ok(dir) => {
            println!("wrote {}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
