//! Acceptance suite: one PASS/FAIL line per criterion, with timing.
//!
//! Run with `cargo test -p safebatch --test acceptance`. The process exits
//! non-zero if any criterion fails.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::sync::Arc;
use std::time::Instant;

use safebatch::experiment::{frozenlake_experiment, ope_comparison_parallel, ExperimentConfig, ExperimentOutput};
use safebatch_core::approx::{FeatureMap, QFunction};
use safebatch_core::dataset::{full_coverage, make_frozenlake_behavior, nearest_hole_policy, shortest_path_actions, subsample};
use safebatch_core::dual::{bound_rounds, duality_gap_bound, eg_init, eg_regret_bound, eg_update};
use safebatch_core::exact::{exact_q_function, performance_difference_check, value_iteration};
use safebatch_core::fitted::{fqe, fqi, EmpiricalModel, FitParams, FittedSolver, LstdqSolver};
use safebatch_core::learner::{g_bar_from_mdp, linear_grid, run_with_observer, tuned_eta, RoundRecord};
use safebatch_core::mdp::{MdpParts, FROZENLAKE_GAMMA};
use safebatch_core::ope::{doubly_robust, median, pdis, OpeConfig, OpeMethod};
use safebatch_core::*;
use std::result::Result;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn ok<T, E: std::fmt::Display>(r: Result<T, E>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

const TAU: f64 = 0.1;
const BUDGET: f64 = 30.0;
const OMEGA: f64 = 0.05;
const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

// ── Shared runs ─────────────────────────────────────────────────────────

/// The exact-flavor game on 8x8 FrozenLake, checked at every round.
struct ExactRun {
    rounds: u64,
    cap: u64,
    converged: bool,
    final_gap: f64,
    worst_bound_slack: f64,
    bound_violations: u64,
    sandwich_violations: u64,
    c: f64,
    g: f64,
}

fn exact_frozenlake_run() -> Result<ExactRun, String> {
    let mdp = ok(build_frozenlake(&Layout::standard_8x8()))?;
    let g_bar = g_bar_from_mdp(&mdp);
    let eta = tuned_eta(OMEGA, g_bar, BUDGET);
    let mut config = LearnerConfig::new(vec![TAU], BUDGET, eta, OMEGA);
    config.subroutine = SubroutineFlavor::Exact;
    config.gamma = mdp.gamma();
    config.trace_every = u64::MAX;
    let (mut worst, mut bound_violations, mut sandwich_violations) = (f64::NEG_INFINITY, 0u64, 0u64);
    let out = ok(run_with_observer(&Dataset::empty(1), &config, Some(&mdp), |r: &RoundRecord| {
        let slack = r.gap - duality_gap_bound(BUDGET, eta, g_bar, 1, r.round);
        worst = worst.max(slack);
        let scale = 1e-9 * (1.0 + r.l_max.abs());
        if slack > scale {
            bound_violations += 1;
        }
        if r.l_max + scale < r.l_mixture || r.l_mixture + scale < r.l_min {
            sandwich_violations += 1;
        }
    }))?;
    let v = ok(exact_policy_values(&mdp, &out.mixture))?;
    Ok(ExactRun {
        rounds: out.rounds,
        cap: bound_rounds(BUDGET, g_bar, 1, OMEGA),
        converged: out.converged(),
        final_gap: out.final_record().gap,
        worst_bound_slack: worst,
        bound_violations,
        sandwich_violations,
        c: v.c,
        g: v.g[0],
    })
}

fn fitted_runs() -> Result<Vec<ExperimentOutput>, String> {
    SEEDS
        .iter()
        .map(|&seed| {
            let mut config = ExperimentConfig::frozenlake(Layout::standard_8x8());
            config.seed = seed;
            ok(frozenlake_experiment(&config))
        })
        .collect()
}

fn sup_distance(a: &QFunction, b: &QFunction) -> f64 {
    a.to_table().iter().zip(b.to_table()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn random_stochastic_policy(s: usize, a: usize, seed: u64) -> StochasticPolicy {
    let mut r = rng::stream(seed, "acceptance-policy");
    let mut probs = vec![0.0; s * a];
    for row in probs.chunks_mut(a) {
        rng::flat_dirichlet(&mut r, row);
    }
    StochasticPolicy::new(s, a, probs).unwrap()
}

fn deterministic_fixtures() -> Vec<(String, TabularMdp)> {
    let mut out = vec![
        ("frozenlake-4x4".to_string(), build_frozenlake(&Layout::standard_4x4()).unwrap()),
        ("frozenlake-8x8".to_string(), build_frozenlake(&Layout::standard_8x8()).unwrap()),
    ];
    out.extend((3..=6).map(|n| (format!("lock-{n}"), build_combination_lock(n).unwrap())));
    out
}

/// `max_K ||Q_K - Q*|| - gamma^K ||Q_0 - Q*||` over `K in {1, 5, 20}` for
/// either fitted solver, from a random start.
fn contraction_excess(mdp: &TabularMdp, policy: Option<&DeterministicPolicy>, truth: &QFunction, seed: u64) -> Result<f64, String> {
    let (s, a) = (mdp.num_states(), mdp.num_actions());
    let data = ok(full_coverage(mdp, 1, &mut rng::stream(seed, "cover")))?;
    let q0 = QFunction::tabular_zeros(s, a).randomized(3.0, &mut rng::stream(seed, "q0"));
    let d0 = sup_distance(&q0, truth);
    let solver = ok(FittedSolver::new(ok(EmpiricalModel::new(&data, s, a))?, &q0, mdp.gamma(), 0.0))?;
    let mut worst = f64::NEG_INFINITY;
    for k in [1usize, 5, 20] {
        let q = match policy {
            Some(pi) => ok(solver.fqe(pi, &CostSelector::Primary, k))?.1.q_final,
            None => ok(solver.fqi(&CostSelector::Primary, k))?.1.q_final,
        };
        worst = worst.max(sup_distance(&q, truth) - mdp.gamma().powi(k as i32) * d0);
    }
    Ok(worst)
}

// ── Criteria ────────────────────────────────────────────────────────────

fn criterion_1(run: &ExactRun) -> Outcome {
    ensure!(run.converged, "no convergence within {} rounds (final gap {:.4})", run.cap, run.final_gap);
    ensure!(run.rounds <= run.cap, "{} rounds exceed the cap {}", run.rounds, run.cap);
    ensure!(run.final_gap < OMEGA, "final gap {}", run.final_gap);
    ensure!(
        run.bound_violations == 0,
        "gap bound violated in {} rounds (worst excess {:.3e})",
        run.bound_violations,
        run.worst_bound_slack
    );
    Ok(format!(
        "gap {} < {OMEGA} after {} of {} rounds; gap - bound <= {:.3e} at every round",
        run.final_gap, run.rounds, run.cap, run.worst_bound_slack
    ))
}

fn criterion_2(runs: &[ExperimentOutput]) -> Outcome {
    let mut worst = 0.0f64;
    for (seed, out) in SEEDS.iter().zip(runs) {
        let v_bar = out.dataset.max_abs_cost() / (1.0 - FROZENLAKE_GAMMA) + BUDGET * out.learner.g_bar;
        let g = out.report[0].exact.g[0];
        ensure!(out.learner.converged(), "seed {seed}: no convergence in {} rounds", out.learner.rounds);
        ensure!(g <= TAU + 2.0 * (v_bar + OMEGA) / BUDGET, "seed {seed}: G = {g} above the slack bound");
        ensure!(g <= TAU + 0.01, "seed {seed}: exact G = {g} > {}", TAU + 0.01);
        worst = worst.max(g);
    }
    Ok(format!("max exact G over {} seeds = {worst:.4e} <= {}", runs.len(), TAU + 0.01))
}

fn criterion_3(runs: &[ExperimentOutput], optimum_c: f64) -> Outcome {
    let limit = optimum_c + OMEGA + 0.05;
    let mut worst = f64::NEG_INFINITY;
    for (seed, out) in SEEDS.iter().zip(runs) {
        let c = out.report[0].exact.c;
        ensure!(c <= limit, "seed {seed}: exact C = {c} > {limit}");
        worst = worst.max(c);
    }
    Ok(format!("max exact C = {worst:.5} <= C_opt + 0.1 = {limit:.5} (C_opt {optimum_c:.5})"))
}

fn criterion_4() -> Outcome {
    let mut worst_ratio = 0.0f64;
    for seed in 0..20u64 {
        let (s, a) = (2 + (seed as usize % 9), 2 + (seed as usize % 3));
        let mdp = ok(build_random_mdp(s, a, 0, 1000 + seed))?;
        let behavior = StochasticPolicy::uniform(s, a);
        // 500 trajectories of 100 steps: 5e4 transitions.
        let data = ok(collect(&mdp, &behavior, CollectOptions::new(500, 100), &mut rng::stream(seed, "fqe-oracle")))?;
        ensure!(data.len() == 50_000, "seed {seed}: {} transitions", data.len());
        let pi = ok(DeterministicPolicy::new((0..s).map(|x| (x * 5 + seed as usize) % a).collect(), a))?;
        let params = FitParams::new(mdp.gamma(), 200);
        let (estimate, _) =
            ok(fqe(&data, &pi, &CostSelector::Primary, &QFunction::tabular_zeros(s, a), &params, Some(mdp.initial_distribution())))?;
        let truth = ok(exact_policy_values(&mdp, &pi))?.c;
        let tolerance = 0.02 * mdp.max_abs_cost() / (1.0 - mdp.gamma());
        ensure!((estimate - truth).abs() <= tolerance, "seed {seed}: |{estimate} - {truth}| > {tolerance}");
        worst_ratio = worst_ratio.max((estimate - truth).abs() / tolerance);
    }
    let mut worst_excess = f64::NEG_INFINITY;
    for (i, (name, mdp)) in deterministic_fixtures().into_iter().enumerate() {
        let (s, a) = (mdp.num_states(), mdp.num_actions());
        let pi = ok(DeterministicPolicy::new((0..s).map(|x| (x * 7 + 3) % a).collect(), a))?;
        let truth = ok(exact_q_function(&mdp, &pi.to_stochastic(), &CostSelector::Primary))?;
        let excess = contraction_excess(&mdp, Some(&pi), &truth, i as u64)?;
        ensure!(excess <= 1e-10, "{name}: contraction exceeded by {excess:.3e}");
        worst_excess = worst_excess.max(excess);
    }
    Ok(format!("20 random MDPs: worst |error| = {:.1}% of tolerance; contraction slack {worst_excess:.2e}", 100.0 * worst_ratio))
}

fn criterion_5() -> Outcome {
    let mut worst_excess = f64::NEG_INFINITY;
    let mut checked = Vec::new();
    for (i, (name, mdp)) in deterministic_fixtures().into_iter().enumerate() {
        let (s, a) = (mdp.num_states(), mdp.num_actions());
        let data = ok(full_coverage(&mdp, 1, &mut rng::stream(0, "cover")))?;
        let vi = ok(value_iteration(&mdp, &CostSelector::Primary, 1e-13))?;
        let (pi, _) = ok(fqi(&data, &CostSelector::Primary, &QFunction::tabular_zeros(s, a), &FitParams::new(mdp.gamma(), 100)))?;
        ensure!(pi == vi.greedy_policy(), "{name}: FQI policy differs from value iteration");
        let excess = contraction_excess(&mdp, None, &vi, 10 + i as u64)?;
        ensure!(excess <= 1e-10, "{name}: contraction exceeded by {excess:.3e}");
        worst_excess = worst_excess.max(excess);
        checked.push(name);
    }
    Ok(format!("policies match on {}; contraction slack {worst_excess:.2e}", checked.join(", ")))
}

/// The empirical MDP of a batch without terminations.
fn empirical_mdp(d: &Dataset, s: usize, a: usize, gamma: f64) -> TabularMdp {
    let mut counts = vec![vec![0.0; s]; s * a];
    let mut cost = vec![0.0; s * a];
    let mut n = vec![0.0; s * a];
    for t in d.samples() {
        let k = t.x * a + t.a;
        counts[k][t.x_next] += 1.0;
        cost[k] += t.c;
        n[k] += 1.0;
    }
    let transitions = counts
        .iter()
        .zip(&n)
        .map(|(row, total)| row.iter().enumerate().filter(|e| *e.1 > 0.0).map(|(y, c)| (y, c / total)).collect())
        .collect();
    TabularMdp::new(MdpParts {
        num_states: s,
        num_actions: a,
        num_constraints: 0,
        transitions,
        cost_c: cost.iter().zip(&n).map(|(c, k)| c / k).collect(),
        cost_g: vec![],
        gamma,
        initial: vec![1.0 / s as f64; s],
        terminal: vec![false; s],
    })
    .unwrap()
}

fn criterion_6() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..10u64 {
        let (s, a) = (3 + seed as usize % 5, 2 + seed as usize % 3);
        let mdp = ok(build_random_mdp(s, a, 0, 2000 + seed))?;
        let data = ok(full_coverage(&mdp, 3, &mut rng::stream(seed, "cover")))?;
        let pi = ok(DeterministicPolicy::new((0..s).map(|x| (x + seed as usize) % a).collect(), a))?;
        let features = Arc::new(FeatureMap::one_hot(s, a));
        let solver = ok(LstdqSolver::new(ok(EmpiricalModel::new(&data, s, a))?, features.clone(), mdp.gamma(), 0.0))?;
        let q_hat = ok(QFunction::linear(features, ok(solver.evaluate(&pi, &CostSelector::Primary))?))?;
        let model = empirical_mdp(&data, s, a, mdp.gamma());
        let truth = ok(exact_q_function(&model, &pi.to_stochastic(), &CostSelector::Primary))?;
        let d = sup_distance(&q_hat, &truth);
        ensure!(d <= 1e-8, "seed {seed}: LSTDQ off the empirical evaluation by {d:.3e}");
        worst = worst.max(d);
    }
    let mdp = ok(build_frozenlake(&Layout::standard_8x8()))?;
    let data = ok(full_coverage(&mdp, 1, &mut rng::stream(0, "cover")))?;
    let features = FeatureMap::one_hot(64, 4);
    let run = ok(safebatch_core::fitted::lspi(&data, &CostSelector::Primary, &features, mdp.gamma(), 1e-9, 100, 0.0))?;
    ensure!(run.converged, "LSPI did not converge");
    let pi = ok(QFunction::linear(Arc::new(features), run.weights))?.greedy_policy();
    let vi = ok(value_iteration(&mdp, &CostSelector::Primary, 1e-13))?.greedy_policy();
    ensure!(pi == vi, "LSPI policy differs from value iteration");
    Ok(format!("one-hot LSTDQ within {worst:.2e} on 10 random MDPs; LSPI policy = VI policy on 8x8"))
}

fn criterion_7() -> Outcome {
    let mut r = rng::stream(7, "acceptance-mass");
    let mut lambda = ok(eg_init(3, BUDGET))?;
    let mut drift = 0.0f64;
    for _ in 0..10_000 {
        let z: Vec<f64> = (0..4).map(|_| 40.0 * rng::unit(&mut r) - 20.0).collect();
        let eta = 0.001 + 50.0 * rng::unit(&mut r);
        lambda = ok(eg_update(&lambda, &z, eta))?;
        drift = drift.max((lambda.coords().iter().sum::<f64>() - BUDGET).abs());
        ensure!(drift <= 1e-9, "mass drifted by {drift:.3e}");
    }
    const T: usize = 2000;
    let mut worst = f64::NEG_INFINITY;
    for seed in 0..20u64 {
        let m = 1 + seed as usize % 4;
        let budget = 1.0 + seed as f64;
        let eta = ((m + 1) as f64).ln().sqrt() / (T as f64).sqrt();
        let mut r = rng::stream(seed, "acceptance-losses");
        let seq: Vec<Vec<f64>> = (0..T).map(|_| (0..=m).map(|_| 2.0 * rng::unit(&mut r) - 1.0).collect()).collect();
        // Regret of the loss-minimizing update against the best vertex.
        let mut lambda = ok(eg_init(m, budget))?;
        let (mut paid, mut totals) = (0.0, vec![0.0; m + 1]);
        for z in &seq {
            paid += lambda.coords().iter().zip(z).map(|(l, zi)| l * zi).sum::<f64>();
            totals.iter_mut().zip(z).for_each(|(t, zi)| *t += zi);
            lambda = ok(eg_update(&lambda, z, eta))?;
        }
        let regret = (paid - budget * totals.iter().copied().fold(f64::INFINITY, f64::min)) / T as f64;
        let bound = eg_regret_bound(budget, eta, 1.0, m, T as u64);
        ensure!(regret <= bound, "seed {seed}: regret {regret} > bound {bound}");
        worst = worst.max(regret / bound);
    }
    Ok(format!("mass drift {drift:.1e} over 1e4 updates; regret <= {:.1}% of bound on 20 sequences", 100.0 * worst))
}

fn criterion_8() -> Outcome {
    let layout = Layout::standard_8x8();
    let mdp = ok(build_frozenlake(&layout))?;
    let behavior = ok(make_frozenlake_behavior(&mdp, 0.95))?;
    let data = ok(collect(&mdp, &behavior, CollectOptions::new(5000, 100), &mut rng::stream(0, "collect")))?;
    let policy = ok(nearest_hole_policy(&layout))?;
    let cost = CostSelector::Constraint(0);
    let config = OpeConfig::new(mdp.gamma(), cost.clone());
    let fractions: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();
    let records = ok(ope_comparison_parallel(&data, &policy, &mdp, &fractions, 30, &config, None))?;
    let median_at = |method: OpeMethod, f: f64| {
        let mut e: Vec<f64> = records.iter().filter(|r| r.method == method && r.fraction == f).map(|r| r.abs_error).collect();
        median(&mut e).unwrap()
    };
    let (fqe_med, pdis_med) = (median_at(OpeMethod::Fqe, 1.0), median_at(OpeMethod::Pdis, 1.0));
    ensure!(fqe_med <= 0.02, "FQE median error {fqe_med} at fraction 1");
    ensure!(fqe_med <= pdis_med, "FQE median {fqe_med} > PDIS median {pdis_med}");

    let eval = policy.to_stochastic();
    let zero = QFunction::tabular_zeros(mdp.num_states(), mdp.num_actions());
    let mut worst_dr = 0.0f64;
    for trial in 0..10u64 {
        let part = ok(subsample(&data, 0.1, &mut rng::stream(trial, "dr-zero")))?;
        let gap = (ok(doubly_robust(&part, &eval, &zero, &cost, mdp.gamma()))? - ok(pdis(&part, &eval, &cost, mdp.gamma()))?).abs();
        ensure!(gap <= 1e-12, "DR with zero Q differs from PDIS by {gap:.3e}");
        worst_dr = worst_dr.max(gap);
    }

    let shortest = ok(DeterministicPolicy::new(shortest_path_actions(&mdp).into_iter().map(|a| a.unwrap_or(0)).collect(), 4))?;
    let mut options = CollectOptions::new(20, 100);
    options.allow_partial_support = true;
    let mut spread = 0.0f64;
    for pi in [&policy, &shortest] {
        let eval = pi.to_stochastic();
        for cost in [CostSelector::Primary, CostSelector::Constraint(0)] {
            let q = ok(exact_q_function(&mdp, &eval, &cost))?;
            for horizon in [100, 6] {
                options.max_horizon = horizon;
                let estimates = (0..10u64)
                    .map(|seed| {
                        let d = ok(collect(&mdp, &eval, options, &mut rng::stream(seed, "on-policy")))?;
                        ok(doubly_robust(&d, &eval, &q, &cost, mdp.gamma()))
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                let (lo, hi) = estimates.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(*v), h.max(*v)));
                spread = spread.max(hi - lo);
            }
        }
    }
    ensure!(spread <= 1e-12, "DR with exact Q varies by {spread:.3e} on deterministic on-policy data");
    Ok(format!(
        "fraction 1: FQE median {fqe_med:.2e} <= 0.02, PDIS median {pdis_med:.4}; |DR(0) - PDIS| <= {worst_dr:.1e}; DR(Q) spread {spread:.1e}"
    ))
}

fn criterion_9(run: &ExactRun) -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..100u64 {
        let (s, a) = (2 + seed as usize % 9, 2 + seed as usize % 4);
        let mdp = ok(build_random_mdp(s, a, 1, 3000 + seed))?;
        let residual = ok(performance_difference_check(&mdp, &random_stochastic_policy(s, a, seed)))?;
        ensure!(residual <= 1e-8, "seed {seed}: performance-difference residual {residual:.3e}");
        worst = worst.max(residual);
    }
    ensure!(run.sandwich_violations == 0, "sandwich violated in {} rounds of the exact 8x8 run", run.sandwich_violations);

    // Small exact games with binding constraints, checked every round.
    let mut rounds = 0u64;
    for seed in 0..4u64 {
        let mdp = ok(build_random_mdp(4, 3, 1, 40 + seed))?;
        let g_bar = g_bar_from_mdp(&mdp);
        let mut config = LearnerConfig::new(vec![0.3 / (1.0 - mdp.gamma())], 3.0, tuned_eta(0.4, g_bar, 3.0), 0.4);
        config.subroutine = SubroutineFlavor::Exact;
        config.gamma = mdp.gamma();
        config.trace_every = u64::MAX;
        let mut violations = 0u64;
        let out = ok(run_with_observer(&Dataset::empty(1), &config, Some(&mdp), |r: &RoundRecord| {
            let scale = 1e-9 * (1.0 + r.l_max.abs());
            if r.l_max + scale < r.l_mixture || r.l_mixture + scale < r.l_min {
                violations += 1;
            }
        }))?;
        ensure!(violations == 0, "seed {seed}: sandwich violated in {violations} rounds");
        rounds += out.rounds;
    }
    Ok(format!(
        "PD residual <= {worst:.2e} on 100 MDPs; sandwich held in all {} rounds of the 8x8 run and {rounds} rounds on random MDPs",
        run.rounds
    ))
}

fn criterion_10() -> Outcome {
    let mut config = ExperimentConfig::frozenlake(Layout::standard_8x8());
    config.grid = Some(ok(linear_grid(0.0, 5.0, 0.5))?);
    let out = ok(frozenlake_experiment(&config))?;
    let best = out.report.iter().find(|r| r.name == "best_member").ok_or("no best member")?;
    let lambda_hat = out.learner.multipliers_hat().to_vec();
    ensure!(out.grid.last().map(|g| &g.0.lambda) == Some(&lambda_hat), "the grid does not end with lambda_hat");
    let (c, g) = (best.exact.c, best.exact.g[0]);
    let hit = out.grid.iter().find(|(_, v)| (v.c - c).abs() <= 0.02 && (v.g[0] - g).abs() <= 0.02);
    match hit {
        Some((shot, v)) => Ok(format!(
            "grid point lambda = {:.4} gives (C, G) = ({:.5}, {:.5}) vs best member ({c:.5}, {g:.5}); lambda_hat = {:.4}",
            shot.lambda[0], v.c, v.g[0], lambda_hat[0]
        )),
        None => Err(format!("no grid point within 0.02 of the best member ({c}, {g})")),
    }
}

// ── Driver ──────────────────────────────────────────────────────────────

fn report(id: usize, start: Instant, outcome: Outcome, failures: &mut Vec<usize>) {
    let secs = start.elapsed().as_secs_f64();
    match outcome {
        Ok(detail) => println!("criterion {id:>2}: PASS ({secs:7.2}s) {detail}"),
        Err(detail) => {
            println!("criterion {id:>2}: FAIL ({secs:7.2}s) {detail}");
            failures.push(id);
        }
    }
}

fn main() {
    let mut failures = Vec::new();

    let start = Instant::now();
    let exact = exact_frozenlake_run();
    let exact_secs = start.elapsed();
    match &exact {
        Ok(run) => report(1, start, criterion_1(run), &mut failures),
        Err(e) => report(1, start, Err(e.clone()), &mut failures),
    }

    let start = Instant::now();
    let runs = fitted_runs();
    let fitted_secs = start.elapsed();
    match &runs {
        Ok(runs) => report(2, start, criterion_2(runs), &mut failures),
        Err(e) => report(2, start, Err(e.clone()), &mut failures),
    }
    let start = Instant::now() - fitted_secs;
    match (&runs, &exact) {
        (Ok(runs), Ok(run)) => {
            let outcome = if run.g <= TAU + 1e-9 {
                criterion_3(runs, run.c)
            } else {
                Err(format!("the exact optimum reference is infeasible (G = {})", run.g))
            };
            report(3, start, outcome, &mut failures)
        }
        _ => report(3, start, Err("a shared run failed".into()), &mut failures),
    }

    let start = Instant::now();
    report(4, start, criterion_4(), &mut failures);
    let start = Instant::now();
    report(5, start, criterion_5(), &mut failures);
    let start = Instant::now();
    report(6, start, criterion_6(), &mut failures);
    let start = Instant::now();
    report(7, start, criterion_7(), &mut failures);
    let start = Instant::now();
    report(8, start, criterion_8(), &mut failures);
    // The sandwich check rides on the exact 8x8 run; its time is included.
    let start = Instant::now() - exact_secs;
    match &exact {
        Ok(run) => report(9, start, criterion_9(run), &mut failures),
        Err(e) => report(9, start, Err(e.clone()), &mut failures),
    }
    let start = Instant::now();
    report(10, start, criterion_10(), &mut failures);

    if failures.is_empty() {
        println!("acceptance: all 10 criteria passed");
    } else {
        println!("acceptance: {} of 10 criteria failed: {failures:?}", failures.len());
        std::process::exit(1);
    }
}
