use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dre_core::harness::{emit_plots, resolve_threads, ExperimentConfig, ExperimentKind, ResultEnvelope, PLOT_KINDS, THREADS_ENV};
use dre_core::Error;

#[derive(Parser)]
#[command(name = "dre", version, about = "Ensemble experiments for diffusions in random environment")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Plain paths and their direct velocity.
    Simulate(RunArgs),
    /// Coupled paths, regeneration times and i.i.d. checks.
    Regen(RunArgs),
    /// Direct and renewal velocity estimates.
    Velocity(RunArgs),
    /// Escape frequencies along a direction grid.
    Zeroone(RunArgs),
    /// Two-walker encounter probabilities against the level L.
    Encounter(RunArgs),
    /// Long-visit fractions around slabs.
    Oscillation(RunArgs),
    /// Re-emit plots and print the summary of a finished run.
    Report(ReportArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed; overrides `master_seed` in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; beats the environment variable and the config.
    #[arg(long)]
    threads: Option<usize>,
    /// Comma-separated plot kinds, or `all`.
    #[arg(long, value_delimiter = ',')]
    plots: Vec<String>,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory written by a previous run.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_delimiter = ',')]
    plots: Vec<String>,
}

fn expand_plots(kinds: &[String]) -> Vec<String> {
    if kinds.iter().any(|k| k == "all") {
        PLOT_KINDS.iter().map(|s| s.to_string()).collect()
    } else {
        kinds.iter().filter(|k| !k.is_empty()).cloned().collect()
    }
}

fn plots(env: &ResultEnvelope, kinds: &[String], dir: &Path) -> Result<(), Error> {
    let outcome = emit_plots(env, &expand_plots(kinds), dir)?;
    for k in &outcome.skipped {
        eprintln!("warning: no `{k}` series in this run, plot skipped");
    }
    for p in &outcome.written {
        eprintln!("wrote {}", p.display());
    }
    Ok(())
}

fn run(kind: ExperimentKind, args: RunArgs) -> Result<(), Error> {
    let mut cfg = ExperimentConfig::from_file(&args.config)?;
    cfg.kind = kind;
    if let Some(seed) = args.seed {
        cfg.master_seed = seed;
    }
    let env_threads = std::env::var(THREADS_ENV).ok();
    cfg.threads = resolve_threads(args.threads, env_threads.as_deref(), cfg.threads)?;
    let dir = args
        .out
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out").join(kind.name()));
    let env = dre_core::harness::run_experiment(&cfg)?;
    env.write_to(&dir)?;
    plots(&env, &args.plots, &dir)?;
    println!("{}", env.summary_json());
    eprintln!("results in {} (config {})", dir.display(), &env.config_hash[..12]);
    Ok(())
}

fn report(args: ReportArgs) -> Result<(), Error> {
    let env = ResultEnvelope::read_from(&args.out)?;
    plots(&env, &args.plots, &args.out)?;
    println!("{}", env.summary_json());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Simulate(a) => run(ExperimentKind::Simulate, a),
        Command::Regen(a) => run(ExperimentKind::Regen, a),
        Command::Velocity(a) => run(ExperimentKind::Velocity, a),
        Command::Zeroone(a) => run(ExperimentKind::Zeroone, a),
        Command::Encounter(a) => run(ExperimentKind::Encounter, a),
        Command::Oscillation(a) => run(ExperimentKind::Oscillation, a),
        Command::Report(a) => report(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 3 })
        }
    }
}
