//! `ipp`: train the guided planner, evaluate it against benchmarks, run
//! ablations, or inspect a single replanning step.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

mod commands;

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

use ipp_core::CoreError;

#[derive(Parser)]
#[command(name = "ipp", version, about = "Informative path planning laboratory")]
struct Cli {
    /// Mission configuration file (TOML) overlaid on the profile defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Experiment scale: `desk` (default) or `paper`.
    #[arg(long, global = true)]
    profile: Option<String>,

    /// Worker pool size (default: available cores).
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Output directory (default: `$IPP_OUT_ROOT/<command>` or
    /// `runs/<command>`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct TrainArgs {
    /// Training seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    iterations: Option<usize>,
    /// Episodes per iteration.
    #[arg(long)]
    episodes: Option<usize>,
    /// Tree-search simulations per step.
    #[arg(long)]
    simulations: Option<usize>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Checkpoint stem (path without the .json/.bin suffix); required for
    /// the rl planner.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Comma-separated planner list (rl, random, coverage, mcts_pw, cmaes).
    #[arg(long, value_delimiter = ',')]
    planners: Option<Vec<String>>,
    /// Comma-separated mission seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Tree-search simulations per replanning step.
    #[arg(long)]
    simulations: Option<usize>,
}

#[derive(Args)]
struct AblateArgs {
    /// Variant: baseline, fixed_window, fixed_exploration,
    /// no_forced_playouts, no_global_pooling, encoder5, no_history.
    #[arg(long)]
    variant: String,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    simulations: Option<usize>,
}

#[derive(Args)]
struct PlanArgs {
    /// Checkpoint stem (path without the .json/.bin suffix).
    #[arg(long)]
    checkpoint: PathBuf,
    /// Scenario seed for the ground truth and prior.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    simulations: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run self-play training and write checkpoints plus a metrics CSV.
    Train(TrainArgs),
    /// Run benchmark missions and write per-mission and aggregate CSVs.
    Evaluate(EvaluateArgs),
    /// Train and evaluate one ablation variant.
    Ablate(AblateArgs),
    /// Run a single deploy-mode replanning step and print the decision.
    Plan(PlanArgs),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(classify(&err))
        }
    }
}

/// Config/usage failures exit with 2, runtime failures with 1.
fn classify(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(core) = cause.downcast_ref::<CoreError>() {
            return match core {
                CoreError::Config { .. } | CoreError::Checkpoint(_) => 2,
                _ => 1,
            };
        }
        if cause.downcast_ref::<commands::UsageError>().is_some() {
            return 2;
        }
    }
    1
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let profile = cli
        .profile
        .as_deref()
        .map(|p| p.parse::<ipp_core::Profile>())
        .transpose()?;
    let mut cfg = ipp_core::load_config(cli.config.as_deref(), profile)?;
    if let Some(workers) = cli.workers {
        cfg.workers = workers;
    }
    commands::init_worker_pool(cfg.workers)?;

    match cli.command {
        Command::Train(args) => {
            apply_train_overrides(&mut cfg, &args);
            let out = commands::resolve_out_dir(cli.out, "train")?;
            commands::cmd_train(&cfg, &out)
        }
        Command::Evaluate(args) => {
            if let Some(sims) = args.simulations {
                cfg.search.num_simulations = sims;
            }
            if let Some(seeds) = &args.seeds {
                cfg.evaluation.seeds = seeds.clone();
            }
            if let Some(planners) = &args.planners {
                cfg.evaluation.planners = planners.clone();
            }
            let out = commands::resolve_out_dir(cli.out, "evaluate")?;
            commands::cmd_evaluate(&cfg, args.checkpoint.as_deref(), &out)
        }
        Command::Ablate(args) => {
            apply_train_overrides(
                &mut cfg,
                &TrainArgs {
                    seed: args.seed,
                    iterations: args.iterations,
                    episodes: args.episodes,
                    simulations: args.simulations,
                },
            );
            if let Some(seeds) = &args.seeds {
                cfg.evaluation.seeds = seeds.clone();
            }
            let out = commands::resolve_out_dir(cli.out, "ablate")?;
            commands::cmd_ablate(&cfg, &args.variant, &out)
        }
        Command::Plan(args) => {
            if let Some(sims) = args.simulations {
                cfg.search.num_simulations = sims;
            }
            commands::cmd_plan(&cfg, &args.checkpoint, args.seed.unwrap_or(0))
        }
    }
}

fn apply_train_overrides(cfg: &mut ipp_core::MissionConfig, args: &TrainArgs) {
    if let Some(seed) = args.seed {
        cfg.training.seed = seed;
    }
    if let Some(iterations) = args.iterations {
        cfg.training.iterations = iterations;
    }
    if let Some(episodes) = args.episodes {
        cfg.training.episodes_per_iteration = episodes;
    }
    if let Some(simulations) = args.simulations {
        cfg.search.num_simulations = simulations;
    }
}
