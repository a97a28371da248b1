//! CMA-ES trajectory optimization: a standard (mu/mu_w, lambda) evolution
//! strategy with rank-one and rank-mu covariance updates and CSA step-size
//! control, plus the mission planner optimizing a continuous multi-waypoint
//! trajectory for information per flight second.

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::env::{
    footprint_cells_at, reachable_actions, travel_time_between, KinematicsModel, MeasurementPose,
    SensorModel, TerrainSpec,
};
use crate::error::{CoreError, Result};
use crate::mapping::{
    information_value, interest_set, kalman_fuse, GridMapBelief, InterestRegionSpec,
};
use crate::rng::{derive_seed, rng_for, stream};

use super::Planner;

/// CMA-ES planner parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CmaEsConfig {
    pub iterations: usize,
    pub offspring: usize,
    /// Coordinate-wise initial standard deviations (x, y, z) in meters.
    pub step_sizes: [f64; 3],
    /// Waypoints per optimized trajectory.
    pub horizon: usize,
}

impl Default for CmaEsConfig {
    fn default() -> Self {
        Self {
            iterations: 45,
            offspring: 12,
            step_sizes: [4.0, 4.0, 3.0],
            horizon: 5,
        }
    }
}

impl CmaEsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(CoreError::config("evaluation.cmaes.iterations", "must be >= 1"));
        }
        if self.offspring < 2 {
            return Err(CoreError::config("evaluation.cmaes.offspring", "must be >= 2"));
        }
        if self.step_sizes.iter().any(|&s| !(s > 0.0)) {
            return Err(CoreError::config("evaluation.cmaes.step_sizes", "must be > 0"));
        }
        if self.horizon == 0 {
            return Err(CoreError::config("evaluation.cmaes.horizon", "must be >= 1"));
        }
        Ok(())
    }
}

/// Options for one optimizer run.
pub struct CmaesOptions {
    pub mean: Vec<f64>,
    /// Global step size.
    pub sigma: f64,
    /// Initial covariance diagonal (coordinate variances).
    pub diag_init: Vec<f64>,
    pub offspring: usize,
    pub iterations: usize,
    pub seed: u64,
}

pub struct CmaesOutcome {
    pub best_x: Vec<f64>,
    pub best_f: f64,
    pub evaluations: usize,
}

/// Minimizes `f` with standard CMA-ES. The best-seen point (including the
/// initial mean) is tracked and returned.
pub fn minimize(opts: &CmaesOptions, mut f: impl FnMut(&[f64]) -> f64) -> CmaesOutcome {
    let n = opts.mean.len();
    let lambda = opts.offspring.max(2);
    let mu = lambda / 2;

    // Log-decreasing recombination weights.
    let mut weights: Vec<f64> = (1..=mu)
        .map(|i| ((mu as f64) + 0.5).ln() - (i as f64).ln())
        .collect();
    let w_sum: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= w_sum;
    }
    let mu_eff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();

    let nf = n as f64;
    let cs = (mu_eff + 2.0) / (nf + mu_eff + 5.0);
    let ds = 1.0 + 2.0 * (((mu_eff - 1.0) / (nf + 1.0)).sqrt() - 1.0).max(0.0) + cs;
    let cc = (4.0 + mu_eff / nf) / (nf + 4.0 + 2.0 * mu_eff / nf);
    let c1 = 2.0 / ((nf + 1.3).powi(2) + mu_eff);
    let cmu = (1.0 - c1).min(2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((nf + 2.0).powi(2) + mu_eff));
    let chi_n = nf.sqrt() * (1.0 - 1.0 / (4.0 * nf) + 1.0 / (21.0 * nf * nf));

    let mut rng: ChaCha8Rng = rng_for(opts.seed, stream::PLANNER, 1);
    let normal = Normal::new(0.0, 1.0).unwrap();

    let mut mean = DVector::from_column_slice(&opts.mean);
    let mut sigma = opts.sigma;
    let mut cov = DMatrix::from_diagonal(&DVector::from_column_slice(&opts.diag_init));
    let mut ps = DVector::zeros(n);
    let mut pc = DVector::zeros(n);

    let mut best_x = opts.mean.clone();
    let mut best_f = f(&opts.mean);
    let mut evaluations = 1;

    for it in 0..opts.iterations {
        let eig = cov.clone().symmetric_eigen();
        let d: DVector<f64> = eig.eigenvalues.map(|v| v.max(1e-30).sqrt());
        let b = eig.eigenvectors;

        let mut zs: Vec<DVector<f64>> = Vec::with_capacity(lambda);
        let mut ys: Vec<DVector<f64>> = Vec::with_capacity(lambda);
        let mut fs: Vec<f64> = Vec::with_capacity(lambda);
        for _ in 0..lambda {
            let z = DVector::from_iterator(n, (0..n).map(|_| normal.sample(&mut rng)));
            let y = &b * z.component_mul(&d);
            let x = &mean + sigma * &y;
            let fx = f(x.as_slice());
            evaluations += 1;
            if fx < best_f {
                best_f = fx;
                best_x = x.as_slice().to_vec();
            }
            zs.push(z);
            ys.push(y);
            fs.push(fx);
        }

        let mut order: Vec<usize> = (0..lambda).collect();
        order.sort_by(|&a, &bi| fs[a].partial_cmp(&fs[bi]).unwrap());

        let mut y_w = DVector::zeros(n);
        let mut z_w = DVector::zeros(n);
        for (rank, &w) in weights.iter().enumerate() {
            y_w += w * &ys[order[rank]];
            z_w += w * &zs[order[rank]];
        }
        mean += sigma * &y_w;

        ps = (1.0 - cs) * &ps + (cs * (2.0 - cs) * mu_eff).sqrt() * (&b * &z_w);
        let ps_norm = ps.norm();
        let h_sig = ps_norm / (1.0 - (1.0 - cs).powi(2 * (it as i32 + 1))).sqrt() / chi_n
            < 1.4 + 2.0 / (nf + 1.0);
        let h = if h_sig { 1.0 } else { 0.0 };
        pc = (1.0 - cc) * &pc + h * (cc * (2.0 - cc) * mu_eff).sqrt() * &y_w;

        let mut rank_mu = DMatrix::zeros(n, n);
        for (rank, &w) in weights.iter().enumerate() {
            let y = &ys[order[rank]];
            rank_mu += w * y * y.transpose();
        }
        cov = (1.0 - c1 - cmu) * &cov
            + c1 * (&pc * pc.transpose() + (1.0 - h) * cc * (2.0 - cc) * &cov)
            + cmu * rank_mu;
        // Keep the covariance symmetric against round-off.
        cov = (cov.clone() + cov.transpose()) * 0.5;

        sigma *= (cs / ds * (ps_norm / chi_n - 1.0)).exp();
    }

    CmaesOutcome {
        best_x,
        best_f,
        evaluations,
    }
}

/// Diagnostic output of one trajectory optimization.
pub struct CmaesPlanOutcome {
    pub pose: MeasurementPose,
    /// Best information-per-second ratio seen (includes the initial mean).
    pub best_objective: f64,
    /// Objective of the greedy one-step initialization.
    pub greedy_objective: f64,
}

/// CMA-ES mission planner: optimizes a continuous `horizon`-waypoint
/// trajectory maximizing information gain per flight second with simulated
/// fusion, then snaps the first waypoint to the nearest reachable action.
pub struct CmaesPlanner {
    terrain: TerrainSpec,
    sensor: SensorModel,
    kinematics: KinematicsModel,
    interest: InterestRegionSpec,
    cfg: CmaEsConfig,
    seed: u64,
    calls: u64,
}

impl CmaesPlanner {
    pub fn new(
        terrain: TerrainSpec,
        sensor: SensorModel,
        kinematics: KinematicsModel,
        interest: InterestRegionSpec,
        cfg: CmaEsConfig,
        seed: u64,
    ) -> Self {
        Self {
            terrain,
            sensor,
            kinematics,
            interest,
            cfg,
            seed,
            calls: 0,
        }
    }

    fn bounds(&self) -> ([f64; 2], [f64; 2], [f64; 2]) {
        self.terrain.action_bounds()
    }

    /// Ratio of simulated information gain to flight time for a clamped
    /// waypoint sequence; zero-length legs are skipped and legs beyond the
    /// remaining budget are dropped.
    fn trajectory_objective(
        &self,
        belief: &GridMapBelief,
        start: [f64; 3],
        remaining_budget: f64,
        flat: &[f64],
    ) -> f64 {
        let (bx, by, bz) = self.bounds();
        let mut belief_cur: Option<GridMapBelief> = None;
        let mut pos = start;
        let mut total_cost = 0.0;
        let mut total_gain = 0.0;
        for wp in flat.chunks_exact(3) {
            let w = [
                wp[0].clamp(bx[0], bx[1]),
                wp[1].clamp(by[0], by[1]),
                wp[2].clamp(bz[0], bz[1]),
            ];
            let d2 = (w[0] - pos[0]).powi(2) + (w[1] - pos[1]).powi(2) + (w[2] - pos[2]).powi(2);
            if d2 < 1e-18 {
                continue;
            }
            let cost = travel_time_between(pos, w, &self.kinematics);
            if total_cost + cost > remaining_budget {
                break;
            }
            let current = belief_cur.as_ref().unwrap_or(belief);
            let interest = interest_set(current, &self.interest);
            let cells = footprint_cells_at(w[0], w[1], w[2], &self.terrain, &self.sensor);
            let ml: Vec<f64> = cells.iter().map(|&c| current.mean[c]).collect();
            let fused = kalman_fuse(current, &cells, &ml, self.sensor.noise_variance(w[2]))
                .expect("positive sensor noise");
            total_gain += information_value(&current.cov, &fused.cov, &interest);
            belief_cur = Some(fused);
            total_cost += cost;
            pos = w;
        }
        if total_cost <= 0.0 {
            return 0.0;
        }
        total_gain / total_cost
    }

    /// Full planning step with diagnostics.
    pub fn plan_trajectory(
        &mut self,
        belief: &GridMapBelief,
        pose: &MeasurementPose,
        remaining_budget: f64,
    ) -> Option<CmaesPlanOutcome> {
        let reachable =
            reachable_actions(pose, remaining_budget, None, &self.terrain, &self.kinematics);
        if reachable.is_empty() {
            return None;
        }

        // Greedy one-step initialization.
        let start = pose.coords();
        let mut greedy = &reachable[0];
        let mut greedy_obj = f64::NEG_INFINITY;
        for candidate in &reachable {
            let obj =
                self.trajectory_objective(belief, start, remaining_budget, &candidate.coords());
            if obj > greedy_obj {
                greedy_obj = obj;
                greedy = candidate;
            }
        }

        let mut mean = Vec::with_capacity(3 * self.cfg.horizon);
        for _ in 0..self.cfg.horizon {
            mean.extend_from_slice(&greedy.coords());
        }
        let mut diag = Vec::with_capacity(3 * self.cfg.horizon);
        for _ in 0..self.cfg.horizon {
            diag.extend(self.cfg.step_sizes.iter().map(|s| s * s));
        }

        let seed = derive_seed(self.seed, stream::PLANNER, self.calls);
        self.calls += 1;
        let opts = CmaesOptions {
            mean,
            sigma: 1.0,
            diag_init: diag,
            offspring: self.cfg.offspring,
            iterations: self.cfg.iterations,
            seed,
        };
        let outcome = minimize(&opts, |x| {
            -self.trajectory_objective(belief, start, remaining_budget, x)
        });

        // Snap the first waypoint to the nearest reachable lattice action.
        let (bx, by, bz) = self.bounds();
        let w0 = [
            outcome.best_x[0].clamp(bx[0], bx[1]),
            outcome.best_x[1].clamp(by[0], by[1]),
            outcome.best_x[2].clamp(bz[0], bz[1]),
        ];
        let snapped = reachable
            .iter()
            .min_by(|a, b| {
                let da = (a.x - w0[0]).powi(2) + (a.y - w0[1]).powi(2) + (a.z - w0[2]).powi(2);
                let db = (b.x - w0[0]).powi(2) + (b.y - w0[1]).powi(2) + (b.z - w0[2]).powi(2);
                da.partial_cmp(&db).unwrap()
            })
            .copied()
            .expect("reachable set non-empty");

        Some(CmaesPlanOutcome {
            pose: snapped,
            best_objective: -outcome.best_f,
            greedy_objective: greedy_obj,
        })
    }
}

impl Planner for CmaesPlanner {
    fn name(&self) -> &str {
        "cmaes"
    }

    fn plan_next(
        &mut self,
        belief: &GridMapBelief,
        pose: &MeasurementPose,
        remaining_budget: f64,
    ) -> Option<MeasurementPose> {
        self.plan_trajectory(belief, pose, remaining_budget)
            .map(|o| o.pose)
    }
}
