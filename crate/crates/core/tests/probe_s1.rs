use ipp_core::config::{MissionConfig, Profile};
use ipp_core::env::generate_ground_truth;
use ipp_core::mapping::{build_prior, interest_set, kalman_fuse};
use ipp_core::net::checkpoint;
use ipp_core::net::features::{compute_frame, FeatureLayout, HistoryBuffer};
use ipp_core::net::NetEvaluator;
use ipp_core::rng::{derive_seed, stream};
use ipp_core::search::{run_search, IppProblem, PlanState};
use std::sync::Arc;

#[test]
#[ignore]
fn probe_seed1() {
    let cfg = MissionConfig::default_for(Profile::Desk);
    let (net, _) = checkpoint::load(std::path::Path::new("/tmp/kg_t1"), "ckpt_0009").unwrap();
    let field = generate_ground_truth(derive_seed(0, stream::GROUND_TRUTH, 0), &cfg.env, 0.4);
    let layout = FeatureLayout { n_altitudes: 2, history_frames: 2 };
    let problem = IppProblem {
        terrain: cfg.env.clone(), sensor: cfg.sensor, kinematics: cfg.kinematics,
        interest: cfg.interest, action_radius: None, total_budget: 150.0,
    };
    let mut belief = build_prior(&cfg.env, &cfg.kernel, 0.5);
    let mut pose = cfg.env.nearest_pose(2.0, 2.0, 14.0);
    let mut budget = 150.0;
    let mut history = HistoryBuffer::seeded(compute_frame(&belief, &pose, budget, 150.0, &cfg.interest, &cfg.env));
    for step in 0..5 {
        let state = PlanState { belief: Arc::new(belief.clone()), pose, remaining_budget: budget, history: history.clone() };
        let eval = NetEvaluator { net: &net, layout };
        let mut rng = ipp_core::rng::rng_for(0, stream::PLANNER, 0);
        let out = run_search(&problem, state, &eval, &cfg.search, false, &mut rng).unwrap();
        let mut by_prior: Vec<(usize, f64)> = out.root.actions.iter().copied().zip(out.root.priors.iter().copied()).collect();
        by_prior.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
        let g = 10;
        let fmt = |a: usize| format!("({},{},z{})", (a % 100) % g, (a % 100) / g, if a < 100 { 8 } else { 14 });
        let visited: Vec<String> = (0..out.root.actions.len()).filter(|&i| out.root.visits[i] > 0)
            .map(|i| format!("{} n{} r{:.2} q{:.2}", fmt(out.root.actions[i]), out.root.visits[i], out.root.rewards[i], out.root.q[i].unwrap_or(-1.0))).collect();
        println!("step {step}: pose {} top priors {:?}", fmt(pose.action_index),
            by_prior.iter().take(4).map(|(a,p)| format!("{} {:.3}", fmt(*a), p)).collect::<Vec<_>>());
        println!("   visited {:?}", visited);
        let action = ipp_core::search::best_action(&out.root);
        let to = cfg.env.pose_for_action(action);
        let cost = ipp_core::env::travel_time(&pose, &to, &cfg.kinematics);
        let m = ipp_core::env::measure(&field, &to, &cfg.env, &cfg.sensor, derive_seed(0, stream::MEASUREMENT, step));
        let interest = interest_set(&belief, &cfg.interest);
        let post = kalman_fuse(&belief, &m.cells, &m.values, m.noise_var).unwrap();
        let gain = ipp_core::mapping::information_value(&belief.cov, &post.cov, &interest);
        println!("   -> {} cost {cost:.1} gain {gain:.2}", fmt(action));
        history.push(compute_frame(&belief, &pose, budget, 150.0, &cfg.interest, &cfg.env));
        belief = post; budget -= cost; pose = to;
    }
}
