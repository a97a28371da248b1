//! Self-play training: episode generation with train-mode tree search,
//! the adaptive replay window, exploration schedules, and the iteration
//! loop alternating episode generation with network training.

use ndarray::Array3;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use std::time::Instant;

use crate::config::MissionConfig;
use crate::env::{generate_ground_truth, measure, travel_time};
use crate::error::{CoreError, Result};
use crate::mapping::{build_prior, information_value, interest_set, kalman_fuse, KernelSpec};
use crate::net::features::{compute_frame, FeatureLayout, HistoryBuffer};
use crate::net::loss::Sample;
use crate::net::train::train_epochs;
use crate::net::{NetEvaluator, NetParams};
use crate::rng::{derive_seed, rng_for, stream};
use crate::search::{extract_policy, run_search, IppProblem, PlanState, SearchConfig};

/// Exploration and replay-window schedule parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    pub c1_start: f64,
    pub c1_min: f64,
    pub c1_decay: f64,
    pub delta_start: f64,
    pub delta_min: f64,
    pub delta_decay: f64,
    pub window_start: usize,
    pub window_step: usize,
    pub window_max: usize,
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        Self {
            c1_start: 15.0,
            c1_min: 4.0,
            c1_decay: 0.8,
            delta_start: 1.0,
            delta_min: 0.3,
            delta_decay: 0.8,
            window_start: 1,
            window_step: 2,
            window_max: 10,
        }
    }
}

impl ScheduleSpec {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("schedules.c1_start", self.c1_start),
            ("schedules.c1_min", self.c1_min),
            ("schedules.delta_start", self.delta_start),
            ("schedules.delta_min", self.delta_min),
        ] {
            if !(v > 0.0) {
                return Err(CoreError::config(field, "must be > 0"));
            }
        }
        for (field, v) in [
            ("schedules.c1_decay", self.c1_decay),
            ("schedules.delta_decay", self.delta_decay),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(CoreError::config(field, "must be in (0, 1]"));
            }
        }
        for (field, v) in [
            ("schedules.window_start", self.window_start),
            ("schedules.window_step", self.window_step),
            ("schedules.window_max", self.window_max),
        ] {
            if v == 0 {
                return Err(CoreError::config(field, "must be >= 1"));
            }
        }
        Ok(())
    }
}

/// Exponentially decayed exploration constants for training iteration `i`:
/// `c1 = max(c1_start * decay^i, c1_min)` and likewise for delta.
pub fn exploration_constants(iteration: usize, spec: &ScheduleSpec) -> (f64, f64) {
    let c1 = (spec.c1_start * spec.c1_decay.powi(iteration as i32)).max(spec.c1_min);
    let delta = (spec.delta_start * spec.delta_decay.powi(iteration as i32)).max(spec.delta_min);
    (c1, delta)
}

/// Adaptive replay window: `min(floor(w_start + i / w_step), w_max)`.
pub fn window_size(iteration: usize, spec: &ScheduleSpec) -> usize {
    (spec.window_start + iteration / spec.window_step).min(spec.window_max)
}

/// One replay tuple.
#[derive(Debug, Clone)]
pub struct ExperienceRecord {
    pub features: Array3<f64>,
    /// Reachable-action mask matching the features.
    pub mask: Vec<bool>,
    pub action: usize,
    pub target_policy: Vec<f64>,
    /// Reward-to-go from this state, back-filled at episode end.
    pub target_value: f64,
    pub remaining_budget: f64,
    /// Immediate reward of the executed step.
    pub reward: f64,
}

/// Iteration-block replay buffer; sampling only touches the newest `w`
/// blocks.
#[derive(Default)]
pub struct ReplayBuffer {
    blocks: Vec<Vec<ExperienceRecord>>,
}

impl ReplayBuffer {
    pub fn push_block(&mut self, records: Vec<ExperienceRecord>) {
        self.blocks.push(records);
    }

    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    pub fn total_records(&self) -> usize {
        self.blocks.iter().map(|b| b.len()).sum()
    }

    /// Records of the newest `window` blocks.
    pub fn window_records(&self, window: usize) -> Vec<&ExperienceRecord> {
        let start = self.blocks.len().saturating_sub(window);
        self.blocks[start..].iter().flatten().collect()
    }
}

/// Generates one self-play episode: fresh ground truth, a prior drawn from
/// randomized GP hyperparameters, a random start pose, then train-mode tree
/// search per step with the action sampled from the visit policy. Target
/// values are back-filled as reward-to-go.
pub fn generate_episode(
    net: &NetParams,
    cfg: &MissionConfig,
    iteration: usize,
    episode_seed: u64,
) -> Vec<ExperienceRecord> {
    let terrain = &cfg.env;
    let mut setup_rng = rng_for(episode_seed, stream::EPISODE_SETUP, 0);

    let field = generate_ground_truth(
        derive_seed(episode_seed, stream::GROUND_TRUTH, 1),
        terrain,
        cfg.interest.mu_th,
    );
    let kernel = KernelSpec {
        length_scale: setup_rng
            .random_range(cfg.training.gp_length_scale_range[0]..=cfg.training.gp_length_scale_range[1]),
        signal_variance: setup_rng.random_range(
            cfg.training.gp_signal_variance_range[0]..=cfg.training.gp_signal_variance_range[1],
        ),
        noise_variance: cfg.kernel.noise_variance,
    };
    let start_action = setup_rng.random_range(0..terrain.action_count());

    let budget = cfg.training.budget;
    let belief = Arc::new(build_prior(terrain, &kernel, cfg.prior_mean));
    let pose = terrain.pose_for_action(start_action);
    let layout = FeatureLayout {
        n_altitudes: terrain.altitudes.len(),
        history_frames: cfg.net.history_frames,
    };
    let frame = compute_frame(&belief, &pose, budget, budget, &cfg.interest, terrain);
    let mut state = PlanState {
        belief,
        pose,
        remaining_budget: budget,
        history: HistoryBuffer::seeded_with_capacity(frame, cfg.net.history_frames),
    };

    let problem = IppProblem {
        terrain: terrain.clone(),
        sensor: cfg.sensor,
        kinematics: cfg.kinematics,
        interest: cfg.interest,
        action_radius: cfg.training.action_radius,
        total_budget: budget,
    };
    let evaluator = NetEvaluator { net, layout };

    let (c1, delta) = exploration_constants(iteration, &cfg.schedules);
    let search_cfg = SearchConfig {
        c1,
        delta,
        ..cfg.search
    };
    let prune_k =
        (search_cfg.forced_playout_k > 0.0).then_some(search_cfg.forced_playout_k);

    let mut records: Vec<ExperienceRecord> = Vec::new();
    for step in 0..cfg.training.max_steps {
        let mut search_rng = rng_for(episode_seed, stream::ROOT_NOISE, step as u64);
        let outcome = match run_search(
            &problem,
            state.clone(),
            &evaluator,
            &search_cfg,
            true,
            &mut search_rng,
        ) {
            Some(o) => o,
            None => break,
        };
        let policy = extract_policy(
            &outcome.root,
            problem.terrain.action_count(),
            search_cfg.tau,
            prune_k,
        );

        let mut policy_rng = rng_for(episode_seed, stream::POLICY_SAMPLE, step as u64);
        let action = sample_from(&policy, &mut policy_rng);

        let features = crate::net::features::featurize(
            &state.belief,
            &state.pose,
            state.remaining_budget,
            budget,
            &state.history,
            terrain,
            &cfg.kinematics,
            &cfg.interest,
            &layout,
        );
        let mut mask = vec![false; problem.terrain.action_count()];
        for &a in &outcome.root.actions {
            mask[a] = true;
        }

        // Execute the action against the real field: noisy measurement,
        // Kalman fusion, reward on the pre-step interest set.
        let to = terrain.pose_for_action(action);
        let cost = travel_time(&state.pose, &to, &cfg.kinematics);
        let interest = interest_set(&state.belief, &cfg.interest);
        let m = measure(
            &field,
            &to,
            terrain,
            &cfg.sensor,
            derive_seed(episode_seed, stream::MEASUREMENT, step as u64),
        );
        let posterior = kalman_fuse(&state.belief, &m.cells, &m.values, m.noise_var)
            .expect("sensor noise keeps fusion well-posed");
        let reward = information_value(&state.belief.cov, &posterior.cov, &interest) / cost;

        records.push(ExperienceRecord {
            features,
            mask,
            action,
            target_policy: policy,
            target_value: 0.0,
            remaining_budget: state.remaining_budget,
            reward,
        });

        let mut history = state.history.clone();
        history.push(compute_frame(
            &state.belief,
            &state.pose,
            state.remaining_budget,
            budget,
            &cfg.interest,
            terrain,
        ));
        state = PlanState {
            belief: Arc::new(posterior),
            pose: to,
            remaining_budget: state.remaining_budget - cost,
            history,
        };
    }

    // Back-fill reward-to-go (gamma = 1); clamp round-off below zero.
    let mut tail = 0.0;
    for record in records.iter_mut().rev() {
        tail += record.reward;
        record.target_value = tail.max(0.0);
    }
    records
}

fn sample_from(policy: &[f64], rng: &mut rand_chacha::ChaCha8Rng) -> usize {
    let total: f64 = policy.iter().sum();
    let mut draw = rng.random_range(0.0..total.max(f64::MIN_POSITIVE));
    let mut last_positive = 0;
    for (i, &p) in policy.iter().enumerate() {
        if p > 0.0 {
            last_positive = i;
            if draw < p {
                return i;
            }
            draw -= p;
        }
    }
    last_positive
}

/// Per-iteration training metrics.
#[derive(Debug, Clone, Serialize)]
pub struct IterationMetrics {
    pub iteration: usize,
    pub episodes: usize,
    pub mean_return: f64,
    /// None when training was skipped because the window was smaller than
    /// one batch.
    pub mean_loss: Option<f64>,
    pub buffer_records: usize,
    pub wall_seconds: f64,
}

/// Result of a training run: the final network and the per-iteration log.
pub struct TrainingRun {
    pub net: NetParams,
    pub metrics: Vec<IterationMetrics>,
}

/// Alternates episode generation and network training for
/// `cfg.training.iterations` iterations. `on_iteration` is invoked with the
/// snapshot published after each iteration (for checkpointing).
pub fn run_training(
    cfg: &MissionConfig,
    mut on_iteration: impl FnMut(usize, &NetParams, &IterationMetrics) -> Result<()>,
) -> Result<TrainingRun> {
    cfg.validate()?;
    let n_alt = cfg.env.altitudes.len();
    let train_seed = cfg.training.seed;
    let mut net = NetParams::init(&cfg.net, n_alt, train_seed);
    let mut buffer = ReplayBuffer::default();
    let mut metrics = Vec::new();

    for iteration in 0..cfg.training.iterations {
        let started = Instant::now();
        let episodes: Vec<Vec<ExperienceRecord>> = (0..cfg.training.episodes_per_iteration)
            .into_par_iter()
            .map(|e| {
                let episode_seed = derive_seed(
                    train_seed,
                    stream::EPISODE,
                    (iteration * cfg.training.episodes_per_iteration + e) as u64,
                );
                generate_episode(&net, cfg, iteration, episode_seed)
            })
            .collect();

        let mean_return = episodes
            .iter()
            .map(|ep| ep.iter().map(|r| r.reward).sum::<f64>())
            .sum::<f64>()
            / episodes.len() as f64;
        buffer.push_block(episodes.into_iter().flatten().collect());

        let window = window_size(iteration, &cfg.schedules);
        let records = buffer.window_records(window);
        let mean_loss = if records.len() < cfg.net.batch_size {
            log::warn!(
                "iteration {iteration}: window holds {} records (< batch size {}), skipping training",
                records.len(),
                cfg.net.batch_size
            );
            None
        } else {
            let samples: Vec<Sample> = records
                .iter()
                .map(|r| Sample {
                    features: &r.features,
                    mask: &r.mask,
                    policy: &r.target_policy,
                    value: r.target_value,
                })
                .collect();
            let losses = train_epochs(
                &mut net,
                &samples,
                derive_seed(train_seed, stream::SHUFFLE, iteration as u64),
            );
            Some(losses.iter().sum::<f64>() / losses.len() as f64)
        };

        let row = IterationMetrics {
            iteration,
            episodes: cfg.training.episodes_per_iteration,
            mean_return,
            mean_loss,
            buffer_records: buffer.total_records(),
            wall_seconds: started.elapsed().as_secs_f64(),
        };
        on_iteration(iteration, &net, &row)?;
        metrics.push(row);
    }

    Ok(TrainingRun { net, metrics })
}

/// Writes the training metrics CSV (`iteration, episodes, mean_return,
/// mean_loss, buffer_records, wall_seconds`).
pub fn write_metrics_csv<W: std::io::Write>(rows: &[IterationMetrics], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "iteration",
        "episodes",
        "mean_return",
        "mean_loss",
        "buffer_records",
        "wall_seconds",
    ])
    .map_err(csv_err)?;
    for row in rows {
        w.write_record(&[
            row.iteration.to_string(),
            row.episodes.to_string(),
            format!("{}", row.mean_return),
            row.mean_loss.map(|l| format!("{l}")).unwrap_or_default(),
            row.buffer_records.to_string(),
            format!("{}", row.wall_seconds),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> CoreError {
    CoreError::Numerical(format!("csv write failed: {e}"))
}
