//! Benchmark planners sharing the mission interface: uniform random,
//! boustrophedon coverage, MCTS with progressive widening and cost-benefit
//! rollouts, and CMA-ES trajectory optimization.

pub mod cmaes;

use rand::seq::index::sample as index_sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{
    footprint_cells, reachable_actions, travel_time, KinematicsModel, MeasurementPose, SensorModel,
    TerrainSpec,
};
use crate::error::{CoreError, Result};
use crate::mapping::{kalman_fuse, GridMapBelief};
use crate::rng::{rng_for, stream};
use crate::search::{normalize_q, PlanningProblem};

pub use cmaes::{CmaEsConfig, CmaesPlanner};

/// A mission planner: proposes the next measurement pose given the current
/// belief, pose, and remaining budget, or `None` when it has nothing
/// affordable to propose.
pub trait Planner {
    fn name(&self) -> &str;

    fn plan_next(
        &mut self,
        belief: &GridMapBelief,
        pose: &MeasurementPose,
        remaining_budget: f64,
    ) -> Option<MeasurementPose>;
}

/// Uniform random sampling over the reachable actions.
pub struct RandomPlanner {
    terrain: TerrainSpec,
    kinematics: KinematicsModel,
    radius: Option<f64>,
    rng: ChaCha8Rng,
}

impl RandomPlanner {
    pub fn new(
        terrain: TerrainSpec,
        kinematics: KinematicsModel,
        radius: Option<f64>,
        seed: u64,
    ) -> Self {
        Self {
            terrain,
            kinematics,
            radius,
            rng: rng_for(seed, stream::PLANNER, 0),
        }
    }
}

impl Planner for RandomPlanner {
    fn name(&self) -> &str {
        "random"
    }

    fn plan_next(
        &mut self,
        _belief: &GridMapBelief,
        pose: &MeasurementPose,
        remaining_budget: f64,
    ) -> Option<MeasurementPose> {
        let reachable =
            reachable_actions(pose, remaining_budget, self.radius, &self.terrain, &self.kinematics);
        if reachable.is_empty() {
            return None;
        }
        let pick = self.rng.random_range(0..reachable.len());
        Some(reachable[pick])
    }
}

/// Boustrophedon sweep waypoints at a fixed altitude: rows and in-row
/// measurement points spaced by the sensor footprint width (in whole cells),
/// with the terminal row/column appended whenever the last sweep line would
/// leave cells uncovered. The serpentine is oriented to begin at its end
/// nearest the mission start.
pub fn coverage_waypoints(
    terrain: &TerrainSpec,
    sensor: &SensorModel,
    altitude: f64,
    start: &MeasurementPose,
) -> Result<Vec<MeasurementPose>> {
    let alt_idx = terrain
        .altitudes
        .iter()
        .position(|&a| (a - altitude).abs() < 1e-9)
        .ok_or_else(|| {
            CoreError::config(
                "coverage.altitude",
                format!("altitude {altitude} is not a lattice altitude"),
            )
        })?;
    let g = terrain.grid_dim();
    let r = terrain.resolution;
    let half_width = sensor.half_width(altitude);
    let step = ((2.0 * half_width / r).floor() as usize).max(1);

    let mut lines: Vec<usize> = (0..g).step_by(step).collect();
    let last = *lines.last().unwrap();
    if ((g - 1 - last) as f64) * r > half_width {
        lines.push(g - 1);
    }

    // Same spacing along rows as across them (square footprint).
    let cols = lines.clone();

    let (by, _, _) = (0, 0, 0);
    let _ = by;
    let mut rows = lines;
    // Begin with the sweep row nearest the start pose.
    let first_y = (rows[0] as f64 + 0.5) * r;
    let last_y = (*rows.last().unwrap() as f64 + 0.5) * r;
    if (start.y - last_y).abs() < (start.y - first_y).abs() {
        rows.reverse();
    }
    let first_x = (cols[0] as f64 + 0.5) * r;
    let last_x = (*cols.last().unwrap() as f64 + 0.5) * r;
    let mut leftward = (start.x - last_x).abs() < (start.x - first_x).abs();

    let cells = terrain.cell_count();
    let mut waypoints = Vec::with_capacity(rows.len() * cols.len());
    for &row in &rows {
        let mut line: Vec<usize> = cols.clone();
        if leftward {
            line.reverse();
        }
        for col in line {
            let action = alt_idx * cells + row * g + col;
            waypoints.push(terrain.pose_for_action(action));
        }
        leftward = !leftward;
    }
    Ok(waypoints)
}

/// Follows a precomputed coverage path, truncating when the budget runs out.
pub struct CoveragePlanner {
    waypoints: Vec<MeasurementPose>,
    cursor: usize,
    kinematics: KinematicsModel,
}

impl CoveragePlanner {
    pub fn new(
        terrain: &TerrainSpec,
        sensor: &SensorModel,
        kinematics: KinematicsModel,
        altitude: f64,
        start: &MeasurementPose,
    ) -> Result<Self> {
        Ok(Self {
            waypoints: coverage_waypoints(terrain, sensor, altitude, start)?,
            cursor: 0,
            kinematics,
        })
    }

    pub fn waypoints(&self) -> &[MeasurementPose] {
        &self.waypoints
    }
}

impl Planner for CoveragePlanner {
    fn name(&self) -> &str {
        "coverage"
    }

    fn plan_next(
        &mut self,
        _belief: &GridMapBelief,
        pose: &MeasurementPose,
        remaining_budget: f64,
    ) -> Option<MeasurementPose> {
        while self.cursor < self.waypoints.len() {
            let wp = self.waypoints[self.cursor];
            if wp.action_index == pose.action_index {
                self.cursor += 1;
                continue;
            }
            if travel_time(pose, &wp, &self.kinematics) <= remaining_budget {
                self.cursor += 1;
                return Some(wp);
            }
            return None;
        }
        None
    }
}

/// Progressive-widening MCTS parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MctsPwConfig {
    pub simulations: usize,
    /// Widening coefficient: a node may hold at most
    /// `ceil(k_pw * N^alpha_pw)` children.
    pub k_pw: f64,
    pub alpha_pw: f64,
    /// Candidate actions sampled per rollout step.
    pub rollout_candidates: usize,
    /// Total lookahead depth (tree plus rollout).
    pub horizon: usize,
    /// UCB exploration constant over min-max normalized values.
    pub ucb_c: f64,
    /// Euclidean restriction of the next-action set.
    #[serde(default)]
    pub radius: Option<f64>,
}

impl Default for MctsPwConfig {
    fn default() -> Self {
        Self {
            simulations: 100,
            k_pw: 4.0,
            alpha_pw: 0.5,
            rollout_candidates: 10,
            horizon: 5,
            ucb_c: std::f64::consts::SQRT_2,
            radius: Some(11.0),
        }
    }
}

impl MctsPwConfig {
    pub fn validate(&self) -> Result<()> {
        if self.simulations == 0 {
            return Err(CoreError::config("evaluation.mcts.simulations", "must be >= 1"));
        }
        if !(self.k_pw > 0.0) {
            return Err(CoreError::config("evaluation.mcts.k_pw", "must be > 0"));
        }
        if !(0.0..=1.0).contains(&self.alpha_pw) {
            return Err(CoreError::config("evaluation.mcts.alpha_pw", "must be in [0, 1]"));
        }
        if self.rollout_candidates == 0 {
            return Err(CoreError::config(
                "evaluation.mcts.rollout_candidates",
                "must be >= 1",
            ));
        }
        if self.horizon == 0 {
            return Err(CoreError::config("evaluation.mcts.horizon", "must be >= 1"));
        }
        if !(self.ucb_c >= 0.0) {
            return Err(CoreError::config("evaluation.mcts.ucb_c", "must be >= 0"));
        }
        if let Some(r) = self.radius {
            if !(r > 0.0) {
                return Err(CoreError::config("evaluation.mcts.radius", "must be > 0"));
            }
        }
        Ok(())
    }

    pub fn child_cap(&self, node_visits: u32) -> usize {
        ((self.k_pw * (node_visits as f64).powf(self.alpha_pw)).ceil() as usize).max(1)
    }
}

struct PwEdge<S> {
    action: usize,
    visits: u32,
    value_sum: f64,
    reward: f64,
    child: PwNode<S>,
}

struct PwNode<S> {
    state: S,
    visits: u32,
    children: Vec<PwEdge<S>>,
    unexpanded: Vec<usize>,
}

impl<S> PwNode<S> {
    fn new<P: PlanningProblem<State = S>>(problem: &P, state: S) -> Self {
        let unexpanded = problem.reachable(&state);
        Self {
            state,
            visits: 0,
            children: Vec::new(),
            unexpanded,
        }
    }
}

/// Result of one progressive-widening search.
pub struct MctsPwOutcome {
    pub action: usize,
    /// (action, visits) per root child.
    pub root_visits: Vec<(usize, u32)>,
}

/// MCTS with progressive widening and greedy cost-benefit rollouts. Returns
/// the most-visited root action, or `None` when no action is reachable.
pub fn mcts_pw_search<P: PlanningProblem>(
    problem: &P,
    root_state: P::State,
    cfg: &MctsPwConfig,
    rng: &mut ChaCha8Rng,
) -> Option<MctsPwOutcome> {
    let mut root = PwNode::new(problem, root_state);
    if root.unexpanded.is_empty() {
        return None;
    }
    for _ in 0..cfg.simulations {
        simulate_pw(problem, &mut root, 0, cfg, rng);
    }

    let best = root
        .children
        .iter()
        .max_by(|a, b| {
            a.visits
                .cmp(&b.visits)
                .then(b.action.cmp(&a.action)) // lowest action on ties
        })?
        .action;
    Some(MctsPwOutcome {
        action: best,
        root_visits: root.children.iter().map(|c| (c.action, c.visits)).collect(),
    })
}

fn simulate_pw<P: PlanningProblem>(
    problem: &P,
    node: &mut PwNode<P::State>,
    depth: usize,
    cfg: &MctsPwConfig,
    rng: &mut ChaCha8Rng,
) -> f64 {
    if depth >= cfg.horizon || (node.children.is_empty() && node.unexpanded.is_empty()) {
        node.visits += 1;
        return 0.0;
    }

    let may_widen =
        !node.unexpanded.is_empty() && node.children.len() < cfg.child_cap(node.visits);
    let g = if may_widen || node.children.is_empty() {
        // Expand a uniformly drawn unexpanded action and evaluate it with a
        // cost-benefit rollout.
        let pick = rng.random_range(0..node.unexpanded.len());
        let action = node.unexpanded.swap_remove(pick);
        let (next_state, reward) = problem.step(&node.state, action);
        let rollout_return = rollout(problem, &next_state, cfg.horizon - depth - 1, cfg, rng);
        let mut child = PwNode::new(problem, next_state);
        child.visits = 1;
        node.children.push(PwEdge {
            action,
            visits: 1,
            value_sum: reward + rollout_return,
            reward,
            child,
        });
        reward + rollout_return
    } else {
        let idx = select_ucb(node, cfg);
        let g_child = simulate_pw(problem, &mut node.children[idx].child, depth + 1, cfg, rng);
        let g = node.children[idx].reward + g_child;
        node.children[idx].visits += 1;
        node.children[idx].value_sum += g;
        g
    };
    node.visits += 1;
    g
}

fn select_ucb<S>(node: &PwNode<S>, cfg: &MctsPwConfig) -> usize {
    let raw: Vec<Option<f64>> = node
        .children
        .iter()
        .map(|c| (c.visits > 0).then(|| c.value_sum / c.visits as f64))
        .collect();
    let q = normalize_q(&raw);
    let ln_n = (node.visits.max(1) as f64).ln();
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (i, c) in node.children.iter().enumerate() {
        let score = q[i] + cfg.ucb_c * (ln_n / c.visits.max(1) as f64).sqrt();
        if score > best_score {
            best_score = score;
            best = i;
        }
    }
    best
}

/// Greedy cost-benefit rollout: at each step, sample candidates and commit
/// to the one with the highest one-step reward.
fn rollout<P: PlanningProblem>(
    problem: &P,
    state: &P::State,
    steps: usize,
    cfg: &MctsPwConfig,
    rng: &mut ChaCha8Rng,
) -> f64 {
    let mut current = state.clone();
    let mut total = 0.0;
    for _ in 0..steps {
        let reachable = problem.reachable(&current);
        if reachable.is_empty() {
            break;
        }
        let mut candidates: Vec<usize> = if reachable.len() <= cfg.rollout_candidates {
            reachable
        } else {
            index_sample(rng, reachable.len(), cfg.rollout_candidates)
                .into_iter()
                .map(|i| reachable[i])
                .collect()
        };
        candidates.sort_unstable();

        let mut best: Option<(P::State, f64, usize)> = None;
        for action in candidates {
            let (next, reward) = problem.step(&current, action);
            let better = match &best {
                Some((_, r, _)) => reward > *r,
                None => true,
            };
            if better {
                best = Some((next, reward, action));
            }
        }
        let (next, reward, _) = best.expect("candidates non-empty");
        total += reward;
        current = next;
    }
    total
}

/// Mission-facing wrapper around [`mcts_pw_search`] over the simulated
/// terrain problem.
pub struct MctsPwPlanner {
    problem: crate::search::IppProblem,
    cfg: MctsPwConfig,
    seed: u64,
    calls: u64,
}

impl MctsPwPlanner {
    pub fn new(problem: crate::search::IppProblem, cfg: MctsPwConfig, seed: u64) -> Self {
        Self {
            problem,
            cfg,
            seed,
            calls: 0,
        }
    }
}

impl Planner for MctsPwPlanner {
    fn name(&self) -> &str {
        "mcts_pw"
    }

    fn plan_next(
        &mut self,
        belief: &GridMapBelief,
        pose: &MeasurementPose,
        remaining_budget: f64,
    ) -> Option<MeasurementPose> {
        use crate::net::features::{FeatureFrame, HistoryBuffer};
        let state = crate::search::PlanState {
            belief: std::sync::Arc::new(belief.clone()),
            pose: *pose,
            remaining_budget,
            history: HistoryBuffer::seeded_with_capacity(
                FeatureFrame {
                    variance: Vec::new(),
                    budget_frac: 0.0,
                    pos: [0.0; 3],
                },
                0,
            ),
        };
        let mut rng = rng_for(self.seed, stream::PLANNER, self.calls);
        self.calls += 1;
        let outcome = mcts_pw_search(&self.problem, state, &self.cfg, &mut rng)?;
        Some(self.problem.terrain.pose_for_action(outcome.action))
    }
}

/// One-step information-per-cost objective used to seed the CMA-ES planner
/// and exercised by the rollout policy.
pub fn one_step_reward(
    belief: &GridMapBelief,
    from: &MeasurementPose,
    to: &MeasurementPose,
    terrain: &TerrainSpec,
    sensor: &SensorModel,
    kinematics: &KinematicsModel,
    interest: &[usize],
) -> f64 {
    let cost = travel_time(from, to, kinematics);
    if cost <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let cells = footprint_cells(to, terrain, sensor);
    let ml: Vec<f64> = cells.iter().map(|&c| belief.mean[c]).collect();
    let fused = kalman_fuse(belief, &cells, &ml, sensor.noise_variance(to.z))
        .expect("positive sensor noise");
    crate::mapping::information_value(&belief.cov, &fused.cov, interest) / cost
}
