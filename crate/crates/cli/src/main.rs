//! `carnot`: runs heat-engine experiments from TOML configs or built-in recipes.

mod artifacts;
mod config;
mod error;
mod recipes;
mod runner;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::ExperimentConfig;
use crate::error::CliError;

/// Overrides the output directory.
const ENV_OUT: &str = "CARNOT_OUT_DIR";
/// Overrides the worker count.
const ENV_THREADS: &str = "CARNOT_THREADS";

#[derive(Parser)]
#[command(name = "carnot", version, about = "Stochastic heat-engine experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a config file or a named recipe and write its artifacts.
    Run(RunArgs),
    /// List the built-in recipes.
    List,
    /// Parse and validate a config without running it.
    Validate(Source),
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct Source {
    /// Name of a built-in recipe (see `carnot list`).
    recipe: Option<String>,
    /// Path of a TOML config.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    source: Source,
    /// Output directory (default: `$CARNOT_OUT_DIR`, the config's
    /// `output_dir`, or `carnot-out/<name>`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (default: `$CARNOT_THREADS` or all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// RNG seed, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
}

/// The config text, the parsed config and the recipe name, if any.
fn load(source: &Source) -> Result<(String, ExperimentConfig, Option<&'static str>), CliError> {
    let (text, recipe) = match (&source.recipe, &source.config) {
        (Some(name), _) => {
            let r = recipes::find(name).ok_or_else(|| CliError::UnknownRecipe(name.clone()))?;
            (r.config.to_string(), Some(r.name))
        }
        (None, Some(path)) => (std::fs::read_to_string(path)?, None),
        (None, None) => {
            return Err(CliError::invalid(
                "config",
                "give a recipe name or --config",
            ))
        }
    };
    let cfg = ExperimentConfig::from_toml(&text)?;
    Ok((text, cfg, recipe))
}

fn env_threads() -> Result<Option<usize>, CliError> {
    match std::env::var(ENV_THREADS) {
        Ok(v) => {
            v.trim().parse().map(Some).map_err(|_| {
                CliError::invalid("threads", format!("{ENV_THREADS}={v} is not a count"))
            })
        }
        Err(_) => Ok(None),
    }
}

fn output_dir(args: &RunArgs, cfg: &ExperimentConfig, recipe: Option<&str>) -> PathBuf {
    if let Some(p) = &args.out {
        return p.clone();
    }
    if let Some(p) = std::env::var_os(ENV_OUT) {
        return PathBuf::from(p);
    }
    if let Some(p) = &cfg.output_dir {
        return p.clone();
    }
    let name = recipe.map(str::to_string).unwrap_or_else(|| {
        args.source
            .config
            .as_deref()
            .and_then(Path::file_stem)
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "run".to_string())
    });
    Path::new("carnot-out").join(name)
}

fn run(args: &RunArgs) -> Result<(), CliError> {
    let (text, mut cfg, recipe) = load(&args.source)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let threads = match args.threads {
        Some(n) => Some(n),
        None => env_threads()?,
    };
    if let Some(n) = threads {
        if n == 0 {
            return Err(CliError::invalid("threads", "must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Output(e.to_string()))?;
    }
    let dir = output_dir(args, &cfg, recipe);
    let outcome = runner::run(&cfg)?;
    let names = artifacts::write_all(&dir, &cfg, &text, recipe, &outcome)?;
    eprintln!("wrote {} files to {}", names.len(), dir.display());
    println!("{}", serde_json::to_string_pretty(&outcome.summary)?);
    Ok(())
}

fn list() {
    for r in recipes::RECIPES {
        println!("{:<22} {:<4} {}", r.name, r.criterion, r.about);
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(args) => run(args),
        Command::List => {
            list();
            Ok(())
        }
        Command::Validate(source) => load(source).map(|(_, cfg, _)| {
            let kind = serde_json::to_value(cfg.kind).unwrap_or_default();
            println!("ok: {} experiment", kind.as_str().unwrap_or("?"));
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
