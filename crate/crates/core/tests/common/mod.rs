//! Shared test fixtures: a tiny enumerable planning problem and independent
//! numeric oracles.

use ipp_core::env::KinematicsModel;
use ipp_core::rng::rng_for;
use ipp_core::search::PlanningProblem;
use rand::Rng;

/// Two-action, fixed-depth planning problem with path-dependent rewards.
/// Small enough to enumerate exhaustively.
pub struct ToyProblem {
    pub depth: usize,
    /// `rewards[d][prefix * 2 + action]` for the edge taken at depth `d`
    /// after the action history encoded in `prefix`.
    pub rewards: Vec<Vec<f64>>,
}

#[derive(Clone, Copy, Debug)]
pub struct ToyState {
    pub depth: usize,
    pub prefix: usize,
}

impl ToyProblem {
    pub fn root() -> ToyState {
        ToyState { depth: 0, prefix: 0 }
    }

    /// Random instance whose optimal first action is separated by at least
    /// `min_margin` under both the best-path and the mean-path return, with
    /// the same argmax. Any search that backs up a mixture of max and mean
    /// values then has a well-posed oracle answer.
    pub fn random(seed: u64, depth: usize, min_margin: f64) -> Self {
        for attempt in 0..10_000 {
            let mut rng = rng_for(seed, 1001, attempt);
            let rewards: Vec<Vec<f64>> = (0..depth)
                .map(|d| (0..(1usize << d) * 2).map(|_| rng.random_range(0.0..1.0)).collect())
                .collect();
            let problem = Self { depth, rewards };
            let (b0, b1) = problem.first_action_returns();
            let (m0, m1) = problem.first_action_mean_returns();
            let separated = (b0 - b1).abs() >= min_margin && (m0 - m1).abs() >= min_margin;
            if separated && ((b0 > b1) == (m0 > m1)) {
                return problem;
            }
        }
        panic!("could not generate a separated toy instance");
    }

    /// Best achievable return from a node, by exhaustive enumeration.
    pub fn best_return(&self, state: ToyState) -> f64 {
        if state.depth >= self.depth {
            return 0.0;
        }
        (0..2)
            .map(|a| {
                let (next, r) = self.step(&state, a);
                r + self.best_return(next)
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Total best return following each first action.
    pub fn first_action_returns(&self) -> (f64, f64) {
        let root = Self::root();
        let (s0, r0) = self.step(&root, 0);
        let (s1, r1) = self.step(&root, 1);
        (r0 + self.best_return(s0), r1 + self.best_return(s1))
    }

    /// Expected return of each first action under uniformly random play.
    pub fn mean_return(&self, state: ToyState) -> f64 {
        if state.depth >= self.depth {
            return 0.0;
        }
        (0..2)
            .map(|a| {
                let (next, r) = self.step(&state, a);
                r + self.mean_return(next)
            })
            .sum::<f64>()
            / 2.0
    }

    pub fn first_action_mean_returns(&self) -> (f64, f64) {
        let root = Self::root();
        let (s0, r0) = self.step(&root, 0);
        let (s1, r1) = self.step(&root, 1);
        (r0 + self.mean_return(s0), r1 + self.mean_return(s1))
    }

    /// Enumeration oracle: the optimal first action.
    pub fn best_first_action(&self) -> usize {
        let (r0, r1) = self.first_action_returns();
        if r0 >= r1 {
            0
        } else {
            1
        }
    }

    /// Same shape with every edge reward scaled.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            depth: self.depth,
            rewards: self
                .rewards
                .iter()
                .map(|level| level.iter().map(|r| r * factor).collect())
                .collect(),
        }
    }
}

impl PlanningProblem for ToyProblem {
    type State = ToyState;

    fn action_count(&self) -> usize {
        2
    }

    fn reachable(&self, state: &ToyState) -> Vec<usize> {
        if state.depth < self.depth {
            vec![0, 1]
        } else {
            Vec::new()
        }
    }

    fn step(&self, state: &ToyState, action: usize) -> (ToyState, f64) {
        let reward = self.rewards[state.depth][state.prefix * 2 + action];
        (
            ToyState {
                depth: state.depth + 1,
                prefix: state.prefix * 2 + action,
            },
            reward,
        )
    }
}

/// Independent flight-time oracle: the accel-cruise-decel profile's duration
/// is `t(v_p) = v_p / a + d / v_p` for peak speed `v_p`, and the fastest
/// admissible profile minimizes it over `v_p in (0, min(v_max, sqrt(d a))]`.
/// Golden-section minimization recovers the optimum without the two-regime
/// closed form.
pub fn travel_time_oracle(d: f64, kin: &KinematicsModel) -> f64 {
    if d <= 0.0 {
        return 0.0;
    }
    let t = |vp: f64| vp / kin.accel + d / vp;
    let hi = kin.max_speed.min((d * kin.accel).sqrt());
    let mut a = hi * 1e-6;
    let mut b = hi;
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - phi * (b - a);
    let mut e = a + phi * (b - a);
    for _ in 0..200 {
        if t(c) < t(e) {
            b = e;
        } else {
            a = c;
        }
        c = b - phi * (b - a);
        e = a + phi * (b - a);
    }
    t(0.5 * (a + b)).min(t(hi))
}
