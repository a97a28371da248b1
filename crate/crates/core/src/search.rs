//! PUCT tree search over a discrete action space, guided by a policy-value
//! function, with min-max value normalization, root Dirichlet noise, forced
//! playouts, and policy-target pruning.
//!
//! The search is generic over a [`PlanningProblem`] so the same machinery
//! runs on the terrain-mapping problem and on small enumerable fixtures.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

use crate::env::{
    footprint_cells, reachable_actions, travel_time, KinematicsModel, MeasurementPose, SensorModel,
    TerrainSpec,
};
use crate::error::{CoreError, Result};
use crate::mapping::{information_value, interest_set, kalman_fuse, GridMapBelief, InterestRegionSpec};
use crate::net::features::HistoryBuffer;

/// A planning model the tree search can simulate: reachable actions per
/// state and a deterministic transition yielding the successor state and the
/// per-edge reward.
pub trait PlanningProblem {
    type State: Clone;

    /// Size of the global action space.
    fn action_count(&self) -> usize;

    /// Actions reachable from `state`, sorted by action index.
    fn reachable(&self, state: &Self::State) -> Vec<usize>;

    /// Simulated transition: successor state and immediate reward.
    fn step(&self, state: &Self::State, action: usize) -> (Self::State, f64);
}

/// Policy-value oracle queried at leaf expansion. Priors are aligned with
/// the `reachable` slice and sum to one; the value is non-negative.
pub trait PolicyValueFn<P: PlanningProblem> {
    fn evaluate(&self, problem: &P, state: &P::State, reachable: &[usize]) -> (Vec<f64>, f64);
}

/// Uniform priors and zero value: the "constant network" used by search
/// correctness fixtures.
pub struct UniformEvaluator;

impl<P: PlanningProblem> PolicyValueFn<P> for UniformEvaluator {
    fn evaluate(&self, _problem: &P, _state: &P::State, reachable: &[usize]) -> (Vec<f64>, f64) {
        let k = reachable.len().max(1);
        (vec![1.0 / k as f64; reachable.len()], 0.0)
    }
}

/// Tree-search hyperparameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchConfig {
    /// Simulations per search.
    pub num_simulations: usize,
    /// Maximum tree depth (planning horizon).
    pub max_depth: usize,
    /// PUCT exploration constant (decayed across training iterations).
    pub c1: f64,
    /// PUCT log-term scale.
    pub c2: f64,
    /// Policy extraction temperature.
    pub tau: f64,
    /// Root Dirichlet noise weight.
    pub epsilon: f64,
    /// Dirichlet concentration (decayed across training iterations).
    pub delta: f64,
    /// Forced-playout multiplier `k`.
    pub forced_playout_k: f64,
    /// Discount factor, fixed at 1 so values restore the budgeted objective.
    pub gamma: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            num_simulations: 10,
            max_depth: 5,
            c1: 4.0,
            c2: 10_000.0,
            tau: 1.0,
            epsilon: 0.25,
            delta: 0.3,
            forced_playout_k: 2.0,
            gamma: 1.0,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_simulations < 1 {
            return Err(CoreError::config("search.num_simulations", "must be >= 1"));
        }
        if self.max_depth < 1 {
            return Err(CoreError::config("search.max_depth", "must be >= 1"));
        }
        if !(self.c1 > 0.0) {
            return Err(CoreError::config("search.c1", "must be > 0"));
        }
        if !(self.c2 > 0.0) {
            return Err(CoreError::config("search.c2", "must be > 0"));
        }
        if !(self.tau > 0.0) {
            return Err(CoreError::config("search.tau", "must be > 0"));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(CoreError::config("search.epsilon", "must be in [0, 1]"));
        }
        if !(self.delta > 0.0) {
            return Err(CoreError::config("search.delta", "must be > 0"));
        }
        if self.forced_playout_k < 0.0 {
            return Err(CoreError::config("search.forced_playout_k", "must be >= 0"));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(CoreError::config("search.gamma", "must be in (0, 1]"));
        }
        Ok(())
    }
}

/// PUCT selection score. `q_norm` is the min-max normalized state-action
/// value in [0, 1].
pub fn puct_score(q_norm: f64, prior: f64, parent_visits: u32, edge_visits: u32, c1: f64, c2: f64) -> f64 {
    let n_s = parent_visits as f64;
    let explore = prior * (n_s.sqrt() / (1.0 + edge_visits as f64))
        * (c1 + ((n_s + c2 + 1.0) / c2).ln());
    q_norm + explore
}

/// Min-max normalizes raw Q values across a node's children. Unvisited
/// children (`None`) take the neutral midpoint 0.5; so do all children when
/// the visited values are tied.
pub fn normalize_q(raw: &[Option<f64>]) -> Vec<f64> {
    let visited: Vec<f64> = raw.iter().filter_map(|q| *q).collect();
    if visited.is_empty() {
        return vec![0.5; raw.len()];
    }
    let lo = visited.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = visited.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    raw.iter()
        .map(|q| match q {
            Some(v) if span > 0.0 => (v - lo) / span,
            Some(_) => 0.5,
            None => 0.5,
        })
        .collect()
}

/// Mixes Dirichlet noise into root priors: `(1 - eps) * p + eps * eta` with
/// `eta ~ Dir(delta)` over the reachable actions.
pub fn apply_root_noise(priors: &mut [f64], epsilon: f64, delta: f64, rng: &mut ChaCha8Rng) {
    if epsilon == 0.0 || priors.is_empty() {
        return;
    }
    let gamma = Gamma::new(delta, 1.0).expect("delta > 0");
    let mut eta: Vec<f64> = priors.iter().map(|_| gamma.sample(rng)).collect();
    let sum: f64 = eta.iter().sum();
    if !(sum.is_finite() && sum > 0.0) {
        return;
    }
    for e in &mut eta {
        *e /= sum;
    }
    for (p, e) in priors.iter_mut().zip(eta) {
        *p = (1.0 - epsilon) * *p + epsilon * e;
    }
}

/// Forced-playout quota for a child with prior `p` when the root has
/// `parent_visits` visits: `ceil(sqrt(k * p * N))`. Zero-prior children are
/// never forced. The quota bounds how many visits forcing may spend on one
/// child during selection and how many visits pruning may subtract from its
/// policy target.
pub fn forced_playout_floor(prior: f64, parent_visits: u32, k: f64) -> u32 {
    if prior <= 0.0 || k <= 0.0 {
        return 0;
    }
    (k * prior * parent_visits as f64).sqrt().ceil() as u32
}

/// Root statistics exposed for policy extraction and diagnostics.
#[derive(Debug, Clone)]
pub struct RootSnapshot {
    /// Reachable root actions, ascending.
    pub actions: Vec<usize>,
    /// Visit count per root action.
    pub visits: Vec<u32>,
    /// Mean backed-up value per root edge (`None` when unvisited).
    pub q: Vec<Option<f64>>,
    /// Root priors after any noise injection.
    pub priors: Vec<f64>,
    /// Per-edge simulated reward (0 until the edge is first traversed).
    pub rewards: Vec<f64>,
    /// Mean value of each child subtree (`None` when unvisited).
    pub child_values: Vec<Option<f64>>,
}

impl RootSnapshot {
    pub fn total_visits(&self) -> u32 {
        self.visits.iter().sum()
    }
}

/// Search result: the visit distribution over the full action space plus the
/// root value estimate.
#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub visit_counts: Vec<u32>,
    pub root_value: f64,
    pub root: RootSnapshot,
}

struct Edge<S> {
    action: usize,
    prior: f64,
    visits: u32,
    value_sum: f64,
    reward: f64,
    child: Option<Box<Node<S>>>,
}

struct Node<S> {
    state: S,
    terminal: bool,
    v_net: f64,
    visit_count: u32,
    value_sum: f64,
    children: Vec<Edge<S>>,
}

impl<S> Node<S> {
    fn mean_value(&self) -> Option<f64> {
        if self.visit_count == 0 {
            None
        } else {
            Some(self.value_sum / self.visit_count as f64)
        }
    }
}

/// Runs a fixed number of PUCT simulations from `root_state`.
///
/// In train mode, Dirichlet noise perturbs the root priors and forced
/// playouts guarantee minimum exploration of every root child; both are
/// disabled in deploy mode, which is fully deterministic given the state,
/// evaluator, and config. Returns `None` when no action is reachable.
pub fn run_search<P, E>(
    problem: &P,
    root_state: P::State,
    evaluator: &E,
    cfg: &SearchConfig,
    train_mode: bool,
    rng: &mut ChaCha8Rng,
) -> Option<SearchOutcome>
where
    P: PlanningProblem,
    E: PolicyValueFn<P>,
{
    let mut root = expand(problem, evaluator, root_state);
    if root.terminal {
        return None;
    }
    if train_mode {
        let mut priors: Vec<f64> = root.children.iter().map(|c| c.prior).collect();
        apply_root_noise(&mut priors, cfg.epsilon, cfg.delta, rng);
        for (edge, p) in root.children.iter_mut().zip(priors) {
            edge.prior = p;
        }
    }

    for _ in 0..cfg.num_simulations {
        simulate(problem, evaluator, &mut root, 0, cfg, train_mode);
    }

    let mut visit_counts = vec![0u32; problem.action_count()];
    for edge in &root.children {
        visit_counts[edge.action] = edge.visits;
    }
    let total: u32 = root.children.iter().map(|c| c.visits).sum();
    let value_total: f64 = root.children.iter().map(|c| c.value_sum).sum();
    let root_value = if total > 0 {
        value_total / total as f64
    } else {
        0.0
    };
    let snapshot = RootSnapshot {
        actions: root.children.iter().map(|c| c.action).collect(),
        visits: root.children.iter().map(|c| c.visits).collect(),
        q: root
            .children
            .iter()
            .map(|c| {
                if c.visits == 0 {
                    None
                } else {
                    Some(c.value_sum / c.visits as f64)
                }
            })
            .collect(),
        priors: root.children.iter().map(|c| c.prior).collect(),
        rewards: root.children.iter().map(|c| c.reward).collect(),
        child_values: root
            .children
            .iter()
            .map(|c| c.child.as_ref().and_then(|n| n.mean_value()))
            .collect(),
    };
    Some(SearchOutcome {
        visit_counts,
        root_value,
        root: snapshot,
    })
}

fn expand<P, E>(problem: &P, evaluator: &E, state: P::State) -> Node<P::State>
where
    P: PlanningProblem,
    E: PolicyValueFn<P>,
{
    let reachable = problem.reachable(&state);
    if reachable.is_empty() {
        return Node {
            state,
            terminal: true,
            v_net: 0.0,
            visit_count: 0,
            value_sum: 0.0,
            children: Vec::new(),
        };
    }
    let (priors, value) = evaluator.evaluate(problem, &state, &reachable);
    debug_assert_eq!(priors.len(), reachable.len());
    let children = reachable
        .into_iter()
        .zip(priors)
        .map(|(action, prior)| Edge {
            action,
            prior,
            visits: 0,
            value_sum: 0.0,
            reward: 0.0,
            child: None,
        })
        .collect();
    Node {
        state,
        terminal: false,
        v_net: value,
        visit_count: 0,
        value_sum: 0.0,
        children,
    }
}

/// One simulation from `node`; returns the value-to-go from `node`.
fn simulate<P, E>(
    problem: &P,
    evaluator: &E,
    node: &mut Node<P::State>,
    depth: usize,
    cfg: &SearchConfig,
    train_mode: bool,
) -> f64
where
    P: PlanningProblem,
    E: PolicyValueFn<P>,
{
    if node.terminal {
        node.visit_count += 1;
        return 0.0;
    }
    if depth >= cfg.max_depth {
        // Horizon leaf: the network value stands in for rollouts.
        node.visit_count += 1;
        node.value_sum += node.v_net;
        return node.v_net;
    }

    let idx = select_child(node, cfg, train_mode && depth == 0);
    let g_child = if node.children[idx].child.is_none() {
        let action = node.children[idx].action;
        let (next_state, reward) = problem.step(&node.state, action);
        node.children[idx].reward = reward;
        let mut child = expand(problem, evaluator, next_state);
        let v = if child.terminal { 0.0 } else { child.v_net };
        child.visit_count = 1;
        child.value_sum = v;
        node.children[idx].child = Some(Box::new(child));
        v
    } else {
        simulate(
            problem,
            evaluator,
            node.children[idx].child.as_mut().unwrap(),
            depth + 1,
            cfg,
            train_mode,
        )
    };

    let g = node.children[idx].reward + cfg.gamma * g_child;
    node.children[idx].visits += 1;
    node.children[idx].value_sum += g;
    node.visit_count += 1;
    node.value_sum += g;
    g
}

fn select_child<S>(node: &Node<S>, cfg: &SearchConfig, forced_active: bool) -> usize {
    let edge_visits: u32 = node.children.iter().map(|c| c.visits).sum();

    if forced_active && cfg.forced_playout_k > 0.0 {
        // A child is underexplored while its visits are below the real-valued
        // sqrt(k * P * N) threshold. Forcing serves the highest-prior
        // candidate first, so a sharpened policy gets its preferences
        // verified up to the quota while the remaining budget spreads over
        // the next candidates instead of hammering one child.
        let n = edge_visits as f64;
        let mut best: Option<usize> = None;
        for (i, edge) in node.children.iter().enumerate() {
            if edge.prior <= 0.0 {
                continue;
            }
            if (edge.visits as f64) < (cfg.forced_playout_k * edge.prior * n).sqrt() {
                let better = match best {
                    Some(b) => edge.prior > node.children[b].prior,
                    None => true,
                };
                if better {
                    best = Some(i);
                }
            }
        }
        if let Some(i) = best {
            return i;
        }
    }

    // The node's own expansion evaluation counts as a visit in the
    // selection formula; with a bare edge sum the first selection has a
    // zero exploration term for every child and always falls to the
    // lowest-index action, which systematically biases shallow searches.
    let parent_visits = edge_visits + 1;

    let raw_q: Vec<Option<f64>> = node
        .children
        .iter()
        .map(|c| {
            if c.visits == 0 {
                None
            } else {
                Some(c.value_sum / c.visits as f64)
            }
        })
        .collect();
    let q_norm = normalize_q(&raw_q);

    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (i, edge) in node.children.iter().enumerate() {
        let score = puct_score(q_norm[i], edge.prior, parent_visits, edge.visits, cfg.c1, cfg.c2);
        if score > best_score {
            best_score = score;
            best = i;
        }
    }
    best
}

/// Derives the policy target from root visit counts: `pi_a proportional to
/// N(s,a)^(1/tau)`.
///
/// With `prune_k` set (train mode), forced visits are first subtracted from
/// every root child except the most-visited one, unless that child's
/// normalized value exceeds the most-visited child's; explored children
/// keep one visit, zero-visit actions get no mass, and if pruning ever
/// empties the distribution the unpruned visits are used. Temperatures
/// below 1e-6 collapse to argmax (lowest action index on ties); temperatures
/// are capped at 1e6.
pub fn extract_policy(
    snapshot: &RootSnapshot,
    action_count: usize,
    tau: f64,
    prune_k: Option<f64>,
) -> Vec<f64> {
    let mut policy = vec![0.0; action_count];
    if snapshot.actions.is_empty() {
        return policy;
    }

    let mut visits: Vec<f64> = snapshot.visits.iter().map(|&v| v as f64).collect();
    if let Some(k) = prune_k {
        let pruned = prune_forced_visits(snapshot, k);
        if pruned.iter().sum::<f64>() > 0.0 {
            visits = pruned;
        }
    }

    let tau = tau.min(1e6);
    if tau < 1e-6 {
        let best = argmax_with_index_tiebreak(&visits);
        policy[snapshot.actions[best]] = 1.0;
        return policy;
    }

    let weights: Vec<f64> = visits
        .iter()
        .map(|&v| if v > 0.0 { v.powf(1.0 / tau) } else { 0.0 })
        .collect();
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return policy;
    }
    for (i, w) in weights.iter().enumerate() {
        policy[snapshot.actions[i]] = w / total;
    }
    policy
}

fn prune_forced_visits(snapshot: &RootSnapshot, k: f64) -> Vec<f64> {
    let n_root = snapshot.total_visits();
    let q_norm = normalize_q(&snapshot.q);
    let raw: Vec<f64> = snapshot.visits.iter().map(|&v| v as f64).collect();
    let most = argmax_with_index_tiebreak(&raw);

    let mut pruned = raw.clone();
    for i in 0..pruned.len() {
        if i == most || snapshot.visits[i] == 0 {
            continue;
        }
        // High-value successors keep their visits; everything else loses its
        // forced share but keeps a single visit, so the policy target ranks
        // value-driven search above exploration quotas while preserving
        // support over every explored child.
        if q_norm[i] > q_norm[most] {
            continue;
        }
        let quota = forced_playout_floor(snapshot.priors[i], n_root, k) as f64;
        pruned[i] -= quota.min(pruned[i] - 1.0).max(0.0);
    }
    pruned
}

fn argmax_with_index_tiebreak(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Deploy-time action choice: the most-visited root action (lowest index on
/// ties).
pub fn best_action(snapshot: &RootSnapshot) -> usize {
    let raw: Vec<f64> = snapshot.visits.iter().map(|&v| v as f64).collect();
    snapshot.actions[argmax_with_index_tiebreak(&raw)]
}

/// Search-time planning state over the terrain-mapping problem: the current
/// belief snapshot, the UAV pose, the remaining budget, and the input-plane
/// history.
#[derive(Clone)]
pub struct PlanState {
    pub belief: Arc<GridMapBelief>,
    pub pose: MeasurementPose,
    pub remaining_budget: f64,
    pub history: HistoryBuffer,
}

/// The terrain-mapping planning problem simulated inside the tree:
/// transitions fuse the maximum-likelihood measurement (the current belief
/// mean at the footprint cells, whose covariance update matches any real
/// measurement) and reward information gain per travel second.
pub struct IppProblem {
    pub terrain: TerrainSpec,
    pub sensor: SensorModel,
    pub kinematics: KinematicsModel,
    pub interest: InterestRegionSpec,
    /// Optional Euclidean restriction of the next-action set.
    pub action_radius: Option<f64>,
    /// Total mission budget, used to normalize budget input planes.
    pub total_budget: f64,
}

impl PlanningProblem for IppProblem {
    type State = PlanState;

    fn action_count(&self) -> usize {
        self.terrain.action_count()
    }

    fn reachable(&self, state: &Self::State) -> Vec<usize> {
        reachable_actions(
            &state.pose,
            state.remaining_budget,
            self.action_radius,
            &self.terrain,
            &self.kinematics,
        )
        .into_iter()
        .map(|p| p.action_index)
        .collect()
    }

    fn step(&self, state: &Self::State, action: usize) -> (Self::State, f64) {
        let to = self.terrain.pose_for_action(action);
        let cost = travel_time(&state.pose, &to, &self.kinematics);
        let interest = interest_set(&state.belief, &self.interest);
        let cells = footprint_cells(&to, &self.terrain, &self.sensor);
        let ml_values: Vec<f64> = cells.iter().map(|&c| state.belief.mean[c]).collect();
        let noise_var = self.sensor.noise_variance(to.z);
        let posterior = kalman_fuse(&state.belief, &cells, &ml_values, noise_var)
            .expect("positive sensor noise keeps the innovation covariance invertible");
        let gain = information_value(&state.belief.cov, &posterior.cov, &interest);
        let reward = gain / cost;

        let mut history = state.history.clone();
        history.push(crate::net::features::compute_frame(
            &state.belief,
            &state.pose,
            state.remaining_budget,
            self.total_budget,
            &self.interest,
            &self.terrain,
        ));
        let next = PlanState {
            belief: Arc::new(posterior),
            pose: to,
            remaining_budget: state.remaining_budget - cost,
            history,
        };
        (next, reward)
    }
}
