use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use matl_cli::aggregate::{aggregate, SUMMARY_FILE};
use matl_cli::config::{seed_offset_from_env, ExperimentConfig};
use matl_cli::plot::plot;
use matl_cli::runner::{experiment_dir, run_experiment, RunOptions};
use matl_cli::{CliError, Result};
use matl_core::policy::GaussianPolicy;
use matl_core::rollout::{evaluate, EvalMetric};

#[derive(Parser)]
#[command(name = "matl", version, about = "Mutual alignment transfer learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every (method, seed) cell of an experiment, then summarize and plot it.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output root; overrides the config's output_dir.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = default_workers())]
        workers: usize,
        /// Run on a single worker.
        #[arg(long)]
        deterministic: bool,
    },
    /// Median and interquartile curves across seeds, written to summary.csv.
    Aggregate {
        /// Experiment directory (<out>/<experiment>).
        #[arg(long)]
        dir: PathBuf,
        /// Experiment whose best final median becomes the ratio reference.
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Render a summary.csv as SVG.
    Plot {
        #[arg(long)]
        summary: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a saved policy on an experiment's evaluation system.
    Eval {
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Check analytic gradients against central differences.
    Gradcheck {
        #[arg(long, default_value_t = 50)]
        cases: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn run(config: &Path, out: Option<PathBuf>, workers: usize, deterministic: bool) -> Result<()> {
    let config = ExperimentConfig::load(config)?;
    let opts = RunOptions {
        out,
        workers,
        deterministic,
        seed_offset: seed_offset_from_env()?,
    };
    let manifest = run_experiment(&config, &opts)?;
    let dir = experiment_dir(&config, &opts);
    aggregate(&dir, None)?;
    plot(&dir.join(SUMMARY_FILE), &dir.join("plot.svg"))?;
    println!("{}: {} runs in {:.1}s -> {}", config.experiment, manifest.cells.len(), manifest.wall_clock_seconds, dir.display());
    Ok(())
}

fn eval(policy: &Path, config: &Path, episodes: usize, seed: u64) -> Result<()> {
    if episodes == 0 {
        return Err(CliError::Usage("--episodes must be at least 1".into()));
    }
    let config = ExperimentConfig::load(config)?;
    let systems = config.env.build(config.train.horizon)?;
    let policy = GaussianPolicy::load(policy)?;
    let metric: EvalMetric = config.train.eval_metric;
    let value = evaluate(&policy, &systems.eval, episodes, metric, seed)?;
    println!("{metric:?} over {episodes} episodes: {value}");
    Ok(())
}

fn gradcheck(cases: usize, seed: u64) -> Result<()> {
    let reports = matl_core::gradcheck::run(cases, seed)?;
    let mut failed = 0;
    for r in &reports {
        let ok = r.passed(1e-5);
        failed += usize::from(!ok);
        println!("{:<20} {:>4} cases  max rel err {:.3e}  {}", r.component, r.cases, r.max_relative_error, if ok { "ok" } else { "FAIL" });
    }
    if failed > 0 {
        return Err(CliError::Core(matl_core::Error::Numeric(format!("{failed} gradient checks failed"))));
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, out, workers, deterministic } => run(&config, out, workers, deterministic),
        Command::Aggregate { dir, reference } => aggregate(&dir, reference.as_deref()).map(|rows| println!("{} summary rows -> {}", rows.len(), dir.join(SUMMARY_FILE).display())),
        Command::Plot { summary, out } => plot(&summary, &out),
        Command::Eval { policy, config, episodes, seed } => eval(&policy, &config, episodes, seed),
        Command::Gradcheck { cases, seed } => gradcheck(cases, seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
