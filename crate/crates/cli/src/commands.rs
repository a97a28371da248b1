//! Subcommand implementations.

use anyhow::{bail, Context};
use std::fmt;
use std::path::{Path, PathBuf};

use ipp_core::config::AblationVariant;
use ipp_core::env::generate_ground_truth;
use ipp_core::evaluation::{
    compare, write_aggregate_csv, write_mission_logs, write_results_csv, PlannerKind,
    CHECKPOINT_FRACTIONS,
};
use ipp_core::mapping::build_prior;
use ipp_core::net::checkpoint;
use ipp_core::net::features::{compute_frame, HistoryBuffer};
use ipp_core::net::NetParams;
use ipp_core::rng::{derive_seed, stream};
use ipp_core::search::{run_search, IppProblem, PlanState};
use ipp_core::training::{run_training, write_metrics_csv};
use ipp_core::MissionConfig;

/// Command-line misuse distinct from config-field validation.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn init_worker_pool(workers: usize) -> anyhow::Result<()> {
    if workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global()
            .context("worker pool initialization failed")?;
    }
    Ok(())
}

/// `--out`, or `$IPP_OUT_ROOT/<command>`, or `runs/<command>`. Fails before
/// any file is written if the directory cannot be created.
pub fn resolve_out_dir(out: Option<PathBuf>, command: &str) -> anyhow::Result<PathBuf> {
    let dir = out.unwrap_or_else(|| {
        let root = std::env::var_os("IPP_OUT_ROOT")
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("runs"));
        root.join(command)
    });
    std::fs::create_dir_all(&dir).map_err(|e| {
        anyhow::Error::new(UsageError(format!(
            "cannot create output directory {}: {e}",
            dir.display()
        )))
    })?;
    Ok(dir)
}

/// Every run directory is self-describing: the effective config is frozen
/// alongside the outputs.
fn freeze_config(cfg: &MissionConfig, dir: &Path) -> anyhow::Result<()> {
    let mut text = String::new();
    text.push_str(&format!(
        "# frozen effective configuration (plane layout v{})\n",
        ipp_core::net::features::PLANE_LAYOUT_VERSION
    ));
    text.push_str(&cfg.to_toml()?);
    std::fs::write(dir.join("config.toml"), text).context("freezing config")?;
    Ok(())
}

pub fn cmd_train(cfg: &MissionConfig, out: &Path) -> anyhow::Result<()> {
    freeze_config(cfg, out)?;
    let grid = cfg.grid_dim();
    log::info!(
        "training: {} iterations x {} episodes on a {grid}x{grid} grid -> {}",
        cfg.training.iterations,
        cfg.training.episodes_per_iteration,
        out.display()
    );
    let run = run_training(cfg, |iteration, net, metrics| {
        checkpoint::save(net, grid, iteration, out, &format!("ckpt_{iteration:04}"))?;
        log::info!(
            "iteration {iteration}: mean return {:.4}, loss {}, buffer {}",
            metrics.mean_return,
            metrics
                .mean_loss
                .map(|l| format!("{l:.4}"))
                .unwrap_or_else(|| "skipped".into()),
            metrics.buffer_records
        );
        Ok(())
    })?;
    let file = std::fs::File::create(out.join("metrics.csv"))?;
    write_metrics_csv(&run.metrics, file)?;
    println!(
        "trained {} iterations; checkpoints and metrics.csv in {}",
        run.metrics.len(),
        out.display()
    );
    Ok(())
}

fn load_net_checked(cfg: &MissionConfig, stem_path: &Path) -> anyhow::Result<NetParams> {
    let dir = stem_path.parent().unwrap_or_else(|| Path::new("."));
    let stem = stem_path
        .file_name()
        .and_then(|s| s.to_str())
        .ok_or_else(|| UsageError(format!("invalid checkpoint path {}", stem_path.display())))
        .map_err(anyhow::Error::new)?;
    let (net, manifest) = checkpoint::load(dir, stem)?;
    if manifest.grid_dim != cfg.grid_dim() {
        bail!(UsageError(format!(
            "checkpoint was trained on a {0}x{0} grid but the configuration uses {1}x{1}",
            manifest.grid_dim,
            cfg.grid_dim()
        )));
    }
    if manifest.n_altitudes != cfg.env.altitudes.len() {
        bail!(UsageError(format!(
            "checkpoint expects {} altitudes, configuration has {}",
            manifest.n_altitudes,
            cfg.env.altitudes.len()
        )));
    }
    Ok(net)
}

pub fn cmd_evaluate(
    cfg: &MissionConfig,
    checkpoint_stem: Option<&Path>,
    out: &Path,
) -> anyhow::Result<()> {
    let planners: Vec<PlannerKind> = cfg
        .evaluation
        .planners
        .iter()
        .map(|name| PlannerKind::parse(name))
        .collect::<Result<_, _>>()?;

    let net = if planners.contains(&PlannerKind::Rl) {
        let stem = checkpoint_stem.ok_or_else(|| {
            anyhow::Error::new(UsageError(
                "the rl planner requires --checkpoint".to_string(),
            ))
        })?;
        Some(load_net_checked(cfg, stem)?)
    } else {
        None
    };

    freeze_config(cfg, out)?;
    let result = compare(cfg, &planners, &cfg.evaluation.seeds, net.as_ref())?;

    write_results_csv(&result.missions, std::fs::File::create(out.join("results.csv"))?)?;
    write_aggregate_csv(&result.aggregate, std::fs::File::create(out.join("aggregate.csv"))?)?;
    write_mission_logs(&result.missions, &out.join("missions"))?;

    for row in &result.aggregate {
        println!(
            "{:<9} @{:>3.0}%  trace {:>9.3} +/- {:<8.3} rmse {:.4} +/- {:<6.4} plan {:.4}s",
            row.planner,
            row.checkpoint * 100.0,
            row.trace_mean,
            row.trace_std,
            row.rmse_mean,
            row.rmse_std,
            row.mean_plan_seconds
        );
    }
    println!("results written to {}", out.display());
    Ok(())
}

pub fn cmd_ablate(cfg: &MissionConfig, variant_name: &str, out: &Path) -> anyhow::Result<()> {
    let variant: AblationVariant = variant_name.parse()?;
    let mut variant_cfg = cfg.clone();
    variant.apply(&mut variant_cfg);

    let variant_out = out.join(variant.name());
    std::fs::create_dir_all(&variant_out)?;
    freeze_config(&variant_cfg, &variant_out)?;

    log::info!("ablation `{}`: training", variant.name());
    let grid = variant_cfg.grid_dim();
    let run = run_training(&variant_cfg, |iteration, net, _| {
        checkpoint::save(net, grid, iteration, &variant_out, &format!("ckpt_{iteration:04}"))?;
        Ok(())
    })?;
    write_metrics_csv(
        &run.metrics,
        std::fs::File::create(variant_out.join("metrics.csv"))?,
    )?;

    log::info!("ablation `{}`: evaluating", variant.name());
    let result = compare(
        &variant_cfg,
        &[PlannerKind::Rl],
        &variant_cfg.evaluation.seeds,
        Some(&run.net),
    )?;
    write_results_csv(
        &result.missions,
        std::fs::File::create(variant_out.join("results.csv"))?,
    )?;

    // Table-shaped summary: one row per variant.
    let mut row = vec![variant.name().to_string()];
    for &fraction in &CHECKPOINT_FRACTIONS {
        let mean = result
            .aggregate
            .iter()
            .find(|r| r.checkpoint == fraction)
            .map(|r| r.trace_mean)
            .unwrap_or(f64::NAN);
        row.push(format!("{mean}"));
    }
    for &fraction in &CHECKPOINT_FRACTIONS {
        let mean = result
            .aggregate
            .iter()
            .find(|r| r.checkpoint == fraction)
            .map(|r| r.rmse_mean)
            .unwrap_or(f64::NAN);
        row.push(format!("{mean}"));
    }
    let runtime = result
        .aggregate
        .first()
        .map(|r| r.mean_plan_seconds)
        .unwrap_or(f64::NAN);
    row.push(format!("{runtime}"));

    let header = "variant,trace_33,trace_67,trace_100,rmse_33,rmse_67,rmse_100,runtime_seconds";
    std::fs::write(
        variant_out.join("ablation.csv"),
        format!("{header}\n{}\n", row.join(",")),
    )?;
    println!("{header}");
    println!("{}", row.join(","));
    Ok(())
}

pub fn cmd_plan(cfg: &MissionConfig, checkpoint_stem: &Path, seed: u64) -> anyhow::Result<()> {
    let net = load_net_checked(cfg, checkpoint_stem)?;
    let budget = cfg.training.budget;
    let prior = build_prior(&cfg.env, &cfg.kernel, cfg.prior_mean);
    let pose = cfg.env.nearest_pose(
        cfg.training.start_position[0],
        cfg.training.start_position[1],
        cfg.training.start_position[2],
    );
    // The scenario seed fixes the ground truth for downstream inspection
    // even though a single replanning step only needs the prior.
    let _field = generate_ground_truth(
        derive_seed(seed, stream::GROUND_TRUTH, 0),
        &cfg.env,
        cfg.interest.mu_th,
    );

    let layout = ipp_core::net::features::FeatureLayout {
        n_altitudes: cfg.env.altitudes.len(),
        history_frames: net.config.history_frames,
    };
    let frame = compute_frame(&prior, &pose, budget, budget, &cfg.interest, &cfg.env);
    let state = PlanState {
        belief: std::sync::Arc::new(prior),
        pose,
        remaining_budget: budget,
        history: HistoryBuffer::seeded_with_capacity(frame, net.config.history_frames),
    };
    let problem = IppProblem {
        terrain: cfg.env.clone(),
        sensor: cfg.sensor,
        kinematics: cfg.kinematics,
        interest: cfg.interest,
        action_radius: cfg.training.action_radius,
        total_budget: budget,
    };
    let evaluator = ipp_core::net::NetEvaluator { net: &net, layout };
    let mut rng = ipp_core::rng::rng_for(seed, stream::PLANNER, 0);
    let outcome = run_search(&problem, state, &evaluator, &cfg.search, false, &mut rng)
        .ok_or_else(|| anyhow::anyhow!("no reachable action from the start pose"))?;

    let action = ipp_core::search::best_action(&outcome.root);
    let chosen = cfg.env.pose_for_action(action);
    let visits: Vec<serde_json::Value> = outcome
        .root
        .actions
        .iter()
        .zip(&outcome.root.visits)
        .filter(|(_, &v)| v > 0)
        .map(|(&a, &v)| serde_json::json!({ "action": a, "visits": v }))
        .collect();
    let report = serde_json::json!({
        "action": action,
        "pose": { "x": chosen.x, "y": chosen.y, "z": chosen.z },
        "root_value": outcome.root_value,
        "simulations": cfg.search.num_simulations,
        "visits": visits,
    });
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}
