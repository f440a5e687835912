use safebatch_core::dataset::{full_coverage, make_frozenlake_behavior};
use safebatch_core::dual::{duality_gap_bound, eg_init};
use safebatch_core::exact::{exact_best_response, optimal_policy};
use safebatch_core::learner::{
    g_bar_from_mdp, grid_search, lagrangian_max, linear_grid, regularized_one_shot, run_with_observer, tuned_eta, DualSign, FunctionClass,
    RoundRecord,
};
use safebatch_core::mdp::MdpParts;
use safebatch_core::*;

fn frozenlake_data(seed: u64, trajectories: usize) -> (TabularMdp, Dataset) {
    let mdp = build_frozenlake(&Layout::standard_8x8()).unwrap();
    let behavior = make_frozenlake_behavior(&mdp, 0.95).unwrap();
    let d = collect(&mdp, &behavior, CollectOptions::new(trajectories, 100), &mut rng::stream(seed, "collect")).unwrap();
    (mdp, d)
}

fn exact_config(tau: Vec<f64>, budget: f64, eta: f64, omega: f64, gamma: f64) -> LearnerConfig {
    let mut config = LearnerConfig::new(tau, budget, eta, omega);
    config.subroutine = SubroutineFlavor::Exact;
    config.gamma = gamma;
    config
}

#[test]
fn exact_game_respects_sandwich_and_gap_bound_every_round() {
    for seed in 0..4 {
        let mdp = build_random_mdp(4, 3, 1, 40 + seed).unwrap();
        let g_bar = g_bar_from_mdp(&mdp);
        let (budget, omega) = (3.0, 0.4);
        let eta = tuned_eta(omega, g_bar, budget);
        let mut config = exact_config(vec![0.3 / (1.0 - mdp.gamma())], budget, eta, omega, mdp.gamma());
        config.trace_every = 1000;
        let mut rounds = 0u64;
        let out = run_with_observer(&Dataset::empty(1), &config, Some(&mdp), |r: &RoundRecord| {
            rounds += 1;
            let scale = 1e-9 * (1.0 + r.l_max.abs());
            assert!(r.l_max + scale >= r.l_mixture, "round {}: {} < {}", r.round, r.l_max, r.l_mixture);
            assert!(r.l_mixture + scale >= r.l_min, "round {}: {} < {}", r.round, r.l_mixture, r.l_min);
            assert!(r.gap <= duality_gap_bound(budget, eta, g_bar, 1, r.round) + scale);
            assert_eq!(r.gap, r.l_max - r.l_min);
        })
        .unwrap();
        assert!(out.converged());
        assert_eq!(rounds, out.rounds);
        assert!(out.rounds <= out.max_rounds);
    }
}

#[test]
fn mixture_estimates_are_member_averages() {
    let (mdp, d) = frozenlake_data(1, 500);
    let mut config = LearnerConfig::new(vec![0.1], 30.0, 50.0, 0.05);
    config.max_rounds = Some(60);
    let mut sum_c = 0.0;
    let mut sum_g = 0.0;
    let out = run_with_observer(&d, &config, Some(&mdp), |r: &RoundRecord| {
        sum_c += r.member_c;
        sum_g += r.member_g[0];
        let t = r.round as f64;
        assert!((r.c_hat - sum_c / t).abs() <= 1e-12 * (1.0 + r.c_hat.abs()));
        assert!((r.g_hat[0] - sum_g / t).abs() <= 1e-12 * (1.0 + r.g_hat[0].abs()));
    })
    .unwrap();
    let last = out.final_record();
    assert!((out.mixture.c_hat() - last.c_hat).abs() <= 1e-12);
    assert_eq!(out.mixture.total_count(), out.rounds);
}

#[test]
fn runs_are_deterministic() {
    let (mdp, d) = frozenlake_data(2, 300);
    let mut config = LearnerConfig::new(vec![0.1], 30.0, 50.0, 0.05);
    config.max_rounds = Some(40);
    config.random_init = true;
    config.seed = 17;
    let a = run(&d, &config, Some(&mdp)).unwrap();
    let b = run(&d, &config, Some(&mdp)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn empirical_constraint_satisfaction_at_termination() {
    let (mdp, d) = frozenlake_data(3, 2000);
    let config = LearnerConfig::new(vec![0.1], 30.0, 50.0, 0.05);
    let out = run(&d, &config, Some(&mdp)).unwrap();
    assert!(out.converged());
    let last = out.final_record();
    let v_bar = d.max_abs_cost() / (1.0 - config.gamma) + config.budget * out.g_bar;
    assert!(last.g_hat[0] - 0.1 <= 2.0 * (v_bar + config.omega) / config.budget);
    assert!(last.gap <= config.omega);
}

#[test]
fn no_constraints_means_one_round() {
    let mdp = build_combination_lock(4).unwrap();
    let data = full_coverage(&mdp, 1, &mut rng::stream(0, "cover")).unwrap();
    for subroutine in [SubroutineFlavor::Fitted, SubroutineFlavor::Exact] {
        let mut config = LearnerConfig::new(vec![], 1.0, 0.1, 1e-9);
        config.subroutine = subroutine;
        config.gamma = mdp.gamma();
        let out = run(&data, &config, Some(&mdp)).unwrap();
        assert_eq!(out.rounds, 1);
        assert_eq!(out.final_record().gap, 0.0);
        assert_eq!(out.mixture.members()[0], optimal_policy(&mdp, &CostSelector::Primary).unwrap());
    }
}

/// One state, one action: the only policy has G = 2. The gap at round 1 is
/// `B max(0, G - tau) - (B / 2)(G - tau)`, zero exactly when `G = tau`.
fn single_policy_mdp() -> TabularMdp {
    TabularMdp::new(MdpParts {
        num_states: 1,
        num_actions: 1,
        num_constraints: 1,
        transitions: vec![vec![(0, 1.0)]],
        cost_c: vec![1.0],
        cost_g: vec![1.0],
        gamma: 0.5,
        initial: vec![1.0],
        terminal: vec![false],
    })
    .unwrap()
}

#[test]
fn single_policy_class_gap() {
    let mdp = single_policy_mdp();
    let out = run(&Dataset::empty(1), &exact_config(vec![2.0], 4.0, 0.1, 1e-12, 0.5), Some(&mdp)).unwrap();
    assert_eq!(out.rounds, 1);
    assert_eq!(out.final_record().gap, 0.0);
    let mut config = exact_config(vec![3.0], 4.0, 0.1, 1e-3, 0.5);
    config.max_rounds = Some(5);
    let record = run(&Dataset::empty(1), &config, Some(&mdp)).unwrap().trace.records[0].clone();
    assert!((record.gap - 2.0).abs() < 1e-12, "gap {}", record.gap);
}

#[test]
fn slack_constraint_recovers_the_unconstrained_optimum() {
    let mdp = build_frozenlake(&Layout::standard_4x4()).unwrap();
    let (budget, omega) = (2.0, 0.5);
    let g_bar = g_bar_from_mdp(&mdp);
    // tau = G_bar can never bind, and keeps every loss within [-G_bar, G_bar].
    let (c_hat, out) = exact_constrained_optimum(&mdp, &[g_bar], budget, tuned_eta(omega, g_bar, budget), omega, None).unwrap();
    assert!(out.converged());
    let star = exact_policy_values(&mdp, &optimal_policy(&mdp, &CostSelector::Primary).unwrap()).unwrap().c;
    assert!((c_hat - star).abs() <= omega);
    // The budget coordinate soaks up the dual mass.
    let last = out.final_record();
    assert!(last.lambda[1] > last.lambda[0]);
}

#[test]
fn lagrangian_min_examples() {
    let (mdp, d) = frozenlake_data(4, 500);
    // lambda_hat = 0 gives the unconstrained fitted best response.
    let config = LearnerConfig::new(vec![0.1], 30.0, 50.0, 0.05);
    let shot = regularized_one_shot(&d, &[0.0], &config, Some(&mdp)).unwrap();
    let params = fitted::FitParams { gamma: config.gamma, iterations: config.k_fqi, ridge: config.ridge };
    let template = approx::QFunction::tabular_zeros(64, 4);
    let (pi, _) = fitted::fqi(&d, &CostSelector::Primary, &template, &params).unwrap();
    assert_eq!(shot.policy, pi);

    // Exact flavor at the initial multipliers agrees with the direct solve.
    let exact = exact_config(vec![0.1], 30.0, 50.0, 0.05, mdp.gamma());
    let lambda = eg_init(1, 30.0).unwrap();
    let shot = regularized_one_shot(&d, lambda.multipliers(), &exact, Some(&mdp)).unwrap();
    let direct = exact_policy_values(&mdp, &exact_best_response(&mdp, &lambda).unwrap()).unwrap();
    let l = lambda.multipliers()[0];
    assert!(((shot.c_hat + l * (shot.g_hat[0] - 0.1)) - (direct.c + l * (direct.g[0] - 0.1))).abs() < 1e-8);
}

#[test]
fn grid_sweep_contains_a_feasible_point() {
    let (mdp, d) = frozenlake_data(5, 1000);
    let config = LearnerConfig::new(vec![0.1], 30.0, 50.0, 0.05);
    let grid = linear_grid(0.0, 5.0, 0.5).unwrap();
    assert_eq!(grid.len(), 11);
    let shots = grid_search(&d, &grid, &config, Some(&mdp)).unwrap();
    assert!(shots.iter().any(|s| exact_policy_values(&mdp, &s.policy).unwrap().g[0] <= 0.1));
}

#[test]
fn flavors_agree_on_frozenlake() {
    let (mdp, d) = frozenlake_data(6, 2000);
    let mut fitted = LearnerConfig::new(vec![0.1], 30.0, 50.0, 0.05);
    fitted.max_rounds = Some(500);
    let mut lspi = fitted.clone();
    lspi.subroutine = SubroutineFlavor::Lspi;
    lspi.function_class = FunctionClass::OneHotLinear;
    let mut ogd = fitted.clone();
    ogd.dual_flavor = DualFlavor::OgdBall;
    ogd.eta = 1.0;
    let mut values = Vec::new();
    for config in [fitted, lspi, ogd] {
        let out = run(&d, &config, Some(&mdp)).unwrap();
        values.push(exact_policy_values(&mdp, &out.mixture).unwrap());
    }
    for v in &values {
        assert!(v.g[0] <= 0.1 + 0.01);
        assert!((v.c - values[0].c).abs() < 0.05);
    }
}

#[test]
fn literal_dual_sign_is_accepted() {
    let (mdp, d) = frozenlake_data(7, 300);
    let mut config = LearnerConfig::new(vec![0.1], 30.0, 50.0, 0.05);
    config.dual_sign = DualSign::Literal;
    config.max_rounds = Some(20);
    let out = run(&d, &config, Some(&mdp)).unwrap();
    assert!(out.rounds <= 20);
}

#[test]
fn invalid_configurations_are_rejected() {
    let (mdp, d) = frozenlake_data(8, 50);
    let mut config = LearnerConfig::new(vec![0.1, 0.2], 30.0, 50.0, 0.05);
    assert!(run(&d, &config, Some(&mdp)).is_err());
    config.tau = vec![0.1];
    config.subroutine = SubroutineFlavor::Lspi;
    assert!(run(&d, &config, Some(&mdp)).is_err());
    config.subroutine = SubroutineFlavor::Exact;
    assert!(run(&d, &config, None).is_err());
    assert!((lagrangian_max(1.0, &[0.3, 0.0], &[0.1, 0.1], 10.0) - 3.0).abs() < 1e-12);
}
