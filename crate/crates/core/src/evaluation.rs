//! Mission execution and metrics: runs (planner, environment) missions with
//! effective-time accounting (flight plus planning), computes interest-set
//! trace and RMSE per step, and aggregates multi-seed comparisons.

use rayon::prelude::*;
use serde::Serialize;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use crate::baselines::{
    CmaesPlanner, CoveragePlanner, MctsPwPlanner, Planner, RandomPlanner,
};
use crate::config::MissionConfig;
use crate::env::{
    generate_ground_truth, measure, travel_time, GroundTruthField, MeasurementPose,
};
use crate::error::{CoreError, Result};
use crate::mapping::{build_prior, interest_set, kalman_fuse, GridMapBelief};
use crate::net::features::{compute_frame, FeatureLayout, HistoryBuffer};
use crate::net::{NetEvaluator, NetParams};
use crate::rng::{derive_seed, stream};
use crate::search::{best_action, run_search, IppProblem, PlanState};

/// One executed mission step.
#[derive(Debug, Clone, Serialize)]
pub struct StepLog {
    pub step: usize,
    pub pose: MeasurementPose,
    pub planning_seconds: f64,
    pub travel_seconds: f64,
    /// Covariance trace over the post-fusion interest set.
    pub trace_interest: f64,
    /// RMSE of the mean over the post-fusion interest set.
    pub rmse_interest: f64,
    /// Cumulative planning + travel time.
    pub cumulative_effective: f64,
}

/// Full log of one mission.
#[derive(Debug, Clone, Serialize)]
pub struct MissionResult {
    pub planner: String,
    pub seed: u64,
    pub prior_trace: f64,
    pub prior_rmse: f64,
    pub steps: Vec<StepLog>,
    pub total_travel_seconds: f64,
    pub total_planning_seconds: f64,
    pub planning_calls: usize,
    /// Planner failure diagnostic, if the mission aborted.
    pub aborted: Option<String>,
}

impl MissionResult {
    pub fn total_effective(&self) -> f64 {
        self.steps
            .last()
            .map(|s| s.cumulative_effective)
            .unwrap_or(0.0)
    }

    pub fn mean_planning_seconds(&self) -> f64 {
        if self.planning_calls == 0 {
            0.0
        } else {
            self.total_planning_seconds / self.planning_calls as f64
        }
    }

    /// Metric series on the effective-time axis, starting from the prior.
    fn series(&self, metric: impl Fn(&StepLog) -> f64, prior: f64) -> Vec<(f64, f64)> {
        let mut out = vec![(0.0, prior)];
        out.extend(self.steps.iter().map(|s| (s.cumulative_effective, metric(s))));
        out
    }

    /// Linear interpolation of (trace, rmse) at a fraction of the total
    /// spent effective time. The 100% point equals the terminal log entry.
    pub fn metrics_at_fraction(&self, fraction: f64) -> (f64, f64) {
        let t = fraction * self.total_effective();
        (
            interpolate(&self.series(|s| s.trace_interest, self.prior_trace), t),
            interpolate(&self.series(|s| s.rmse_interest, self.prior_rmse), t),
        )
    }
}

fn interpolate(series: &[(f64, f64)], t: f64) -> f64 {
    if series.is_empty() {
        return 0.0;
    }
    if t <= series[0].0 {
        return series[0].1;
    }
    for pair in series.windows(2) {
        let (t0, v0) = pair[0];
        let (t1, v1) = pair[1];
        if t <= t1 {
            if t1 - t0 <= 0.0 {
                return v1;
            }
            let alpha = (t - t0) / (t1 - t0);
            return v0 + alpha * (v1 - v0);
        }
    }
    series.last().unwrap().1
}

/// Map uncertainty and error over an interest set: covariance trace
/// restricted to the set and RMSE of the mean against the truth. An empty
/// set yields (0, 0).
pub fn metrics(belief: &GridMapBelief, truth: &GroundTruthField, interest: &[usize]) -> (f64, f64) {
    if interest.is_empty() {
        return (0.0, 0.0);
    }
    let trace = belief.trace_over(interest);
    let mse = interest
        .iter()
        .map(|&i| (belief.mean[i] - truth.value(i)).powi(2))
        .sum::<f64>()
        / interest.len() as f64;
    (trace, mse.sqrt())
}

/// Deploy-time planner wrapping the guided tree search: argmax-visit action
/// selection with root noise and forced playouts disabled.
pub struct RlPlanner<'a> {
    net: &'a NetParams,
    problem: IppProblem,
    layout: FeatureLayout,
    history: HistoryBuffer,
    search: crate::search::SearchConfig,
    total_budget: f64,
}

impl<'a> RlPlanner<'a> {
    pub fn new(net: &'a NetParams, cfg: &MissionConfig) -> Self {
        let layout = FeatureLayout {
            n_altitudes: cfg.env.altitudes.len(),
            history_frames: net.config.history_frames,
        };
        let problem = IppProblem {
            terrain: cfg.env.clone(),
            sensor: cfg.sensor,
            kinematics: cfg.kinematics,
            interest: cfg.interest,
            action_radius: cfg.training.action_radius,
            total_budget: cfg.training.budget,
        };
        let start = cfg.env.nearest_pose(
            cfg.training.start_position[0],
            cfg.training.start_position[1],
            cfg.training.start_position[2],
        );
        let prior = build_prior(&cfg.env, &cfg.kernel, cfg.prior_mean);
        let frame = compute_frame(
            &prior,
            &start,
            cfg.training.budget,
            cfg.training.budget,
            &cfg.interest,
            &cfg.env,
        );
        Self {
            net,
            problem,
            layout,
            history: HistoryBuffer::seeded_with_capacity(frame, net.config.history_frames),
            search: cfg.search,
            total_budget: cfg.training.budget,
        }
    }
}

impl Planner for RlPlanner<'_> {
    fn name(&self) -> &str {
        "rl"
    }

    fn plan_next(
        &mut self,
        belief: &GridMapBelief,
        pose: &MeasurementPose,
        remaining_budget: f64,
    ) -> Option<MeasurementPose> {
        let state = PlanState {
            belief: Arc::new(belief.clone()),
            pose: *pose,
            remaining_budget,
            history: self.history.clone(),
        };
        let evaluator = NetEvaluator {
            net: self.net,
            layout: self.layout,
        };
        // Deploy mode is deterministic; the generator is never consumed.
        let mut rng = crate::rng::rng_for(0, stream::PLANNER, 0);
        let outcome = run_search(&self.problem, state, &evaluator, &self.search, false, &mut rng)?;
        let action = best_action(&outcome.root);

        self.history.push(compute_frame(
            belief,
            pose,
            remaining_budget,
            self.total_budget,
            &self.problem.interest,
            &self.problem.terrain,
        ));
        Some(self.problem.terrain.pose_for_action(action))
    }
}

/// Planner kinds selectable by name.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlannerKind {
    Rl,
    Random,
    Coverage,
    MctsPw,
    Cmaes,
}

impl PlannerKind {
    pub fn name(&self) -> &'static str {
        match self {
            PlannerKind::Rl => "rl",
            PlannerKind::Random => "random",
            PlannerKind::Coverage => "coverage",
            PlannerKind::MctsPw => "mcts_pw",
            PlannerKind::Cmaes => "cmaes",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "rl" => Ok(PlannerKind::Rl),
            "random" => Ok(PlannerKind::Random),
            "coverage" => Ok(PlannerKind::Coverage),
            "mcts_pw" => Ok(PlannerKind::MctsPw),
            "cmaes" => Ok(PlannerKind::Cmaes),
            other => Err(CoreError::config(
                "planners",
                format!("unknown planner `{other}`; expected rl, random, coverage, mcts_pw, cmaes"),
            )),
        }
    }
}

fn build_planner<'a>(
    kind: PlannerKind,
    cfg: &MissionConfig,
    net: Option<&'a NetParams>,
    seed: u64,
    start: &MeasurementPose,
) -> Result<Box<dyn Planner + 'a>> {
    let planner_seed = derive_seed(seed, stream::PLANNER, kind as u64);
    Ok(match kind {
        PlannerKind::Rl => {
            let net = net.ok_or_else(|| {
                CoreError::config("planners", "the rl planner requires a checkpoint")
            })?;
            Box::new(RlPlanner::new(net, cfg))
        }
        PlannerKind::Random => Box::new(RandomPlanner::new(
            cfg.env.clone(),
            cfg.kinematics,
            None,
            planner_seed,
        )),
        PlannerKind::Coverage => Box::new(CoveragePlanner::new(
            &cfg.env,
            &cfg.sensor,
            cfg.kinematics,
            cfg.env.altitudes[0],
            start,
        )?),
        PlannerKind::MctsPw => Box::new(MctsPwPlanner::new(
            IppProblem {
                terrain: cfg.env.clone(),
                sensor: cfg.sensor,
                kinematics: cfg.kinematics,
                interest: cfg.interest,
                action_radius: cfg.evaluation.mcts.radius,
                total_budget: cfg.training.budget,
            },
            cfg.evaluation.mcts.clone(),
            planner_seed,
        )),
        PlannerKind::Cmaes => Box::new(CmaesPlanner::new(
            cfg.env.clone(),
            cfg.sensor,
            cfg.kinematics,
            cfg.interest,
            cfg.evaluation.cmaes.clone(),
            planner_seed,
        )),
    })
}

/// Runs one mission: plan (timed), check affordability, fly, measure, fuse,
/// log. The budget gate uses effective time (planning plus travel), so the
/// summed travel time never exceeds the budget; the planning call that
/// discovers exhaustion may overshoot it.
pub fn run_mission(
    planner: &mut dyn Planner,
    field: &GroundTruthField,
    cfg: &MissionConfig,
    seed: u64,
) -> MissionResult {
    let terrain = &cfg.env;
    let budget = cfg.training.budget;
    let mut belief = build_prior(terrain, &cfg.kernel, cfg.prior_mean);
    let mut pose = terrain.nearest_pose(
        cfg.training.start_position[0],
        cfg.training.start_position[1],
        cfg.training.start_position[2],
    );

    let prior_interest = interest_set(&belief, &cfg.interest);
    let (prior_trace, prior_rmse) = metrics(&belief, field, &prior_interest);

    let mut result = MissionResult {
        planner: planner.name().to_string(),
        seed,
        prior_trace,
        prior_rmse,
        steps: Vec::new(),
        total_travel_seconds: 0.0,
        total_planning_seconds: 0.0,
        planning_calls: 0,
        aborted: None,
    };

    let mut remaining = budget;
    let mut step = 0usize;
    // Budget plus minimum hop cost bounds the step count; this is a hard
    // stop against planner misbehavior.
    let step_cap = 10_000;
    while step < step_cap {
        let t0 = Instant::now();
        let next = planner.plan_next(&belief, &pose, remaining);
        let planning_seconds = t0.elapsed().as_secs_f64();
        result.total_planning_seconds += planning_seconds;
        result.planning_calls += 1;
        remaining -= planning_seconds;

        let Some(next) = next else { break };
        if next.action_index == pose.action_index {
            result.aborted = Some("planner returned the current pose".to_string());
            break;
        }
        let travel_seconds = travel_time(&pose, &next, &cfg.kinematics);
        if travel_seconds > remaining {
            break; // final partial step rejected
        }
        remaining -= travel_seconds;
        result.total_travel_seconds += travel_seconds;

        let m = measure(
            field,
            &next,
            terrain,
            &cfg.sensor,
            derive_seed(seed, stream::MEASUREMENT, step as u64),
        );
        belief = match kalman_fuse(&belief, &m.cells, &m.values, m.noise_var) {
            Ok(b) => b,
            Err(e) => {
                result.aborted = Some(format!("fusion failed: {e}"));
                break;
            }
        };
        let interest = interest_set(&belief, &cfg.interest);
        let (trace, rmse) = metrics(&belief, field, &interest);
        result.steps.push(StepLog {
            step,
            pose: next,
            planning_seconds,
            travel_seconds,
            trace_interest: trace,
            rmse_interest: rmse,
            cumulative_effective: result.total_planning_seconds + result.total_travel_seconds,
        });
        pose = next;
        step += 1;
    }
    result
}

/// The three reporting checkpoints on the effective-time axis.
pub const CHECKPOINT_FRACTIONS: [f64; 3] = [0.33, 0.67, 1.0];

/// Aggregate statistics for one planner at one checkpoint.
#[derive(Debug, Clone, Serialize)]
pub struct AggregateRow {
    pub planner: String,
    pub checkpoint: f64,
    pub trace_mean: f64,
    pub trace_std: f64,
    pub rmse_mean: f64,
    pub rmse_std: f64,
    pub mean_plan_seconds: f64,
}

/// Comparison output: all mission logs plus the aggregate table.
#[derive(Debug)]
pub struct CompareResult {
    pub missions: Vec<MissionResult>,
    pub aggregate: Vec<AggregateRow>,
}

/// Runs `planners x seeds` missions (one fresh ground truth per seed, shared
/// across planners) and aggregates mean and standard deviation of the
/// interest-set trace and RMSE at 33%/67%/100% spent effective time.
pub fn compare(
    cfg: &MissionConfig,
    planners: &[PlannerKind],
    seeds: &[u64],
    net: Option<&NetParams>,
) -> Result<CompareResult> {
    if planners.is_empty() || seeds.is_empty() {
        return Err(CoreError::config(
            "evaluation",
            "at least one planner and one seed required",
        ));
    }
    if planners.contains(&PlannerKind::Rl) && net.is_none() {
        return Err(CoreError::config(
            "planners",
            "the rl planner requires a checkpoint",
        ));
    }

    // Duplicate (planner, seed) pairs are the same experiment: run once,
    // reuse the log.
    let jobs: Vec<(PlannerKind, u64)> = planners
        .iter()
        .flat_map(|&p| seeds.iter().map(move |&s| (p, s)))
        .collect();
    let mut unique_jobs: Vec<(PlannerKind, u64)> = jobs.clone();
    unique_jobs.sort_by_key(|&(k, s)| (k.name(), s));
    unique_jobs.dedup();

    let unique_runs: Vec<Result<MissionResult>> = unique_jobs
        .par_iter()
        .map(|&(kind, seed)| {
            let field = generate_ground_truth(
                derive_seed(seed, stream::GROUND_TRUTH, 0),
                &cfg.env,
                cfg.interest.mu_th,
            );
            let start = cfg.env.nearest_pose(
                cfg.training.start_position[0],
                cfg.training.start_position[1],
                cfg.training.start_position[2],
            );
            let mut planner = build_planner(kind, cfg, net, seed, &start)?;
            Ok(run_mission(planner.as_mut(), &field, cfg, seed))
        })
        .collect();
    let unique_runs: Vec<MissionResult> = unique_runs.into_iter().collect::<Result<_>>()?;
    let missions: Vec<MissionResult> = jobs
        .iter()
        .map(|&(kind, seed)| {
            let idx = unique_jobs
                .iter()
                .position(|&(k, s)| k == kind && s == seed)
                .expect("every job has a unique run");
            unique_runs[idx].clone()
        })
        .collect();

    let mut aggregate = Vec::new();
    for &kind in planners {
        let group: Vec<&MissionResult> = missions
            .iter()
            .filter(|m| m.planner == kind.name())
            .collect();
        let mean_plan = group.iter().map(|m| m.mean_planning_seconds()).sum::<f64>()
            / group.len() as f64;
        for &fraction in &CHECKPOINT_FRACTIONS {
            let values: Vec<(f64, f64)> = group
                .iter()
                .map(|m| m.metrics_at_fraction(fraction))
                .collect();
            let (trace_mean, trace_std) = mean_std(values.iter().map(|v| v.0));
            let (rmse_mean, rmse_std) = mean_std(values.iter().map(|v| v.1));
            aggregate.push(AggregateRow {
                planner: kind.name().to_string(),
                checkpoint: fraction,
                trace_mean,
                trace_std,
                rmse_mean,
                rmse_std,
                mean_plan_seconds: mean_plan,
            });
        }
    }
    Ok(CompareResult {
        missions,
        aggregate,
    })
}

fn mean_std(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let v: Vec<f64> = values.collect();
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Writes per-mission checkpoint rows:
/// `planner, seed, checkpoint, trace, rmse, mean_plan_seconds`.
pub fn write_results_csv<W: std::io::Write>(missions: &[MissionResult], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["planner", "seed", "checkpoint", "trace", "rmse", "mean_plan_seconds"])
        .map_err(csv_err)?;
    for m in missions {
        for &fraction in &CHECKPOINT_FRACTIONS {
            let (trace, rmse) = m.metrics_at_fraction(fraction);
            w.write_record(&[
                m.planner.clone(),
                m.seed.to_string(),
                format!("{fraction}"),
                format!("{trace}"),
                format!("{rmse}"),
                format!("{}", m.mean_planning_seconds()),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes the aggregate table.
pub fn write_aggregate_csv<W: std::io::Write>(rows: &[AggregateRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "planner",
        "checkpoint",
        "trace_mean",
        "trace_std",
        "rmse_mean",
        "rmse_std",
        "mean_plan_seconds",
    ])
    .map_err(csv_err)?;
    for r in rows {
        w.write_record(&[
            r.planner.clone(),
            format!("{}", r.checkpoint),
            format!("{}", r.trace_mean),
            format!("{}", r.trace_std),
            format!("{}", r.rmse_mean),
            format!("{}", r.rmse_std),
            format!("{}", r.mean_plan_seconds),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes one JSON line per mission step plus a `path_<planner>_<seed>.csv`
/// trajectory per mission.
pub fn write_mission_logs(missions: &[MissionResult], dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for m in missions {
        let stem = format!("{}_{}", m.planner, m.seed);
        let mut jsonl = String::new();
        for s in &m.steps {
            jsonl.push_str(
                &serde_json::to_string(s)
                    .map_err(|e| CoreError::Numerical(format!("jsonl: {e}")))?,
            );
            jsonl.push('\n');
        }
        std::fs::write(dir.join(format!("steps_{stem}.jsonl")), jsonl)?;

        let mut path_csv = String::from("x,y,z\n");
        for s in &m.steps {
            path_csv.push_str(&format!("{},{},{}\n", s.pose.x, s.pose.y, s.pose.z));
        }
        std::fs::write(dir.join(format!("path_{stem}.csv")), path_csv)?;
    }
    Ok(())
}

fn csv_err(e: csv::Error) -> CoreError {
    CoreError::Numerical(format!("csv write failed: {e}"))
}
