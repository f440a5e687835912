//! Experiment harnesses: the FrozenLake pipeline, and trial-parallel
//! versions of the OPE comparison and the regularization grid.
//!
//! Parallel loops use a dedicated rayon pool and collect in index order, so
//! results never depend on the number of threads.

use rayon::prelude::*;

use safebatch_core::dataset::make_frozenlake_behavior;
use safebatch_core::exact::{optimal_mixture, OptimalMixture};
use safebatch_core::learner::{
    fitted_oracle, g_bar_from_dataset, g_bar_from_mdp, lspi_oracle, play, regularized_one_shot, OneShot, RoundRecord,
};
use safebatch_core::ope::{ope_trial, ope_truth, pdis, OpeConfig, OpeRecord};
use safebatch_core::oracle::{ExactOracle, GameOracle};
use safebatch_core::*;

use crate::error::{Error, Result};
use crate::io::real;

fn pool(jobs: Option<usize>) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| Error::Usage(format!("cannot start worker threads: {e}")))
}

/// [`ope_comparison`](safebatch_core::ope::ope_comparison) with the trials
/// spread over `jobs` threads; the output is identical for every `jobs`.
pub fn ope_comparison_parallel(
    dataset: &Dataset,
    policy: &DeterministicPolicy,
    mdp: &TabularMdp,
    fractions: &[f64],
    trials: usize,
    config: &OpeConfig,
    jobs: Option<usize>,
) -> Result<Vec<OpeRecord>> {
    config.cost.validate(dataset.num_constraints())?;
    let truth = ope_truth(policy, mdp, config)?;
    let cells: Vec<(usize, usize)> = (0..fractions.len()).flat_map(|fi| (0..trials).map(move |t| (fi, t))).collect();
    let chunks = pool(jobs)?.install(|| {
        cells
            .par_iter()
            .map(|&(fi, trial)| ope_trial(dataset, policy, mdp, fractions, fi, trial, truth, config))
            .collect::<safebatch_core::Result<Vec<_>>>()
    })?;
    Ok(chunks.into_iter().flatten().collect())
}

/// [`grid_search`](safebatch_core::learner::grid_search) over `jobs` threads.
pub fn grid_search_parallel(
    dataset: &Dataset,
    grid: &[Vec<f64>],
    config: &LearnerConfig,
    mdp: Option<&TabularMdp>,
    jobs: Option<usize>,
) -> Result<Vec<OneShot>> {
    config.validate()?;
    let shots = pool(jobs)?.install(|| {
        grid.par_iter().map(|lambda| regularized_one_shot(dataset, lambda, config, mdp)).collect::<safebatch_core::Result<Vec<_>>>()
    })?;
    Ok(shots)
}

// ── Traced runs ─────────────────────────────────────────────────────────

/// One round seen through the exact oracle.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundValues {
    pub round: u64,
    pub member_c: f64,
    pub member_g: Vec<f64>,
    pub c_hat: f64,
    pub g_hat: Vec<f64>,
    /// Exact values of the mixture `pi_hat_t`.
    pub exact_c: f64,
    pub exact_g: Vec<f64>,
    pub gap: f64,
}

/// Runs the learner keeping every round, then scores each round's mixture
/// exactly on `mdp`.
pub fn run_with_exact_values(dataset: &Dataset, config: &LearnerConfig, mdp: &TabularMdp) -> Result<(LearnerOutput, Vec<RoundValues>)> {
    let mut config = config.clone();
    config.trace_every = 1;
    let truth = mdp.clone().with_gamma(config.gamma)?;
    match config.subroutine {
        SubroutineFlavor::Fitted => {
            let g_bar = config.g_bar.unwrap_or_else(|| g_bar_from_dataset(dataset, config.gamma));
            let mut oracle = fitted_oracle(dataset, &config, Some(mdp))?;
            let out = play(&mut oracle, &config, g_bar, |_| {})?;
            let values = score_rounds(&oracle, &out.trace.records, &truth)?;
            Ok((out, values))
        }
        SubroutineFlavor::Lspi => {
            let g_bar = config.g_bar.unwrap_or_else(|| g_bar_from_dataset(dataset, config.gamma));
            let mut oracle = lspi_oracle(dataset, &config, Some(mdp))?;
            let out = play(&mut oracle, &config, g_bar, |_| {})?;
            let values = score_rounds(&oracle, &out.trace.records, &truth)?;
            Ok((out, values))
        }
        SubroutineFlavor::Exact => {
            let g_bar = config.g_bar.unwrap_or_else(|| g_bar_from_mdp(&truth));
            let mut oracle = ExactOracle::new(truth.clone());
            let out = play(&mut oracle, &config, g_bar, |_| {})?;
            let values = score_rounds(&oracle, &out.trace.records, &truth)?;
            Ok((out, values))
        }
    }
}

fn score_rounds<O: GameOracle>(oracle: &O, records: &[RoundRecord], mdp: &TabularMdp) -> Result<Vec<RoundValues>> {
    let m = mdp.num_constraints();
    let mut cache: Vec<Option<PolicyValues>> = vec![None; oracle.num_members()];
    let (mut c_sum, mut g_sum) = (0.0, vec![0.0; m]);
    let mut out = Vec::with_capacity(records.len());
    for r in records {
        if cache[r.member].is_none() {
            cache[r.member] = Some(exact_policy_values(mdp, &oracle.member(r.member).policy)?);
        }
        let v = cache[r.member].as_ref().expect("filled above");
        c_sum += v.c;
        g_sum.iter_mut().zip(&v.g).for_each(|(s, g)| *s += g);
        let t = r.round as f64;
        out.push(RoundValues {
            round: r.round,
            member_c: r.member_c,
            member_g: r.member_g.clone(),
            c_hat: r.c_hat,
            g_hat: r.g_hat.clone(),
            exact_c: c_sum / t,
            exact_g: g_sum.iter().map(|s| s / t).collect(),
            gap: r.gap,
        });
    }
    Ok(out)
}

pub fn values_table(values: &[RoundValues]) -> (Vec<String>, Vec<Vec<String>>) {
    let m = values.first().map_or(0, |v| v.g_hat.len());
    let mut header = vec!["round".to_string(), "member_C_hat".into()];
    header.extend((1..=m).map(|i| format!("member_G_hat_{i}")));
    header.push("C_hat".into());
    header.extend((1..=m).map(|i| format!("G_hat_{i}")));
    header.push("C".into());
    header.extend((1..=m).map(|i| format!("G_{i}")));
    header.push("gap".into());
    let rows = values
        .iter()
        .map(|v| {
            let mut row = vec![v.round.to_string(), real(v.member_c)];
            row.extend(v.member_g.iter().map(|x| real(*x)));
            row.push(real(v.c_hat));
            row.extend(v.g_hat.iter().map(|x| real(*x)));
            row.push(real(v.exact_c));
            row.extend(v.exact_g.iter().map(|x| real(*x)));
            row.push(real(v.gap));
            row
        })
        .collect();
    (header, rows)
}

// ── FrozenLake pipeline ─────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub layout: Layout,
    pub trajectories: usize,
    pub horizon: usize,
    /// Probability of a uniformly random action in the behavior policy.
    pub epsilon: f64,
    pub seed: u64,
    pub learner: LearnerConfig,
    /// Optional regularization sweep scored next to the game.
    pub grid: Option<Vec<Vec<f64>>>,
    pub jobs: Option<usize>,
}

impl ExperimentConfig {
    /// 5000 trajectories of at most 100 steps from the 95%-random behavior
    /// policy; `tau = 0.1`, `B = 30`, `eta = 50`, `omega = 0.05`, tabular FQI
    /// and FQE with 100 iterations each.
    pub fn frozenlake(layout: Layout) -> Self {
        Self {
            layout,
            trajectories: 5000,
            horizon: 100,
            epsilon: 0.95,
            seed: 0,
            learner: LearnerConfig::new(vec![0.1], 30.0, 50.0, 0.05),
            grid: None,
            jobs: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.learner.validate()?;
        if self.trajectories == 0 || self.horizon == 0 {
            return Err(Error::Usage("trajectory count and horizon must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::Usage(format!("behavior randomness must lie in [0, 1], got {}", self.epsilon)));
        }
        if self.learner.tau.len() != 1 {
            return Err(Error::Usage("FrozenLake has exactly one constraint; pass a single threshold".into()));
        }
        if let Some(grid) = &self.grid {
            if grid.iter().any(|l| l.len() != 1 || !(l[0] >= 0.0 && l[0].is_finite())) {
                return Err(Error::Usage("grid points must be single non-negative multipliers".into()));
            }
        }
        Ok(())
    }
}

/// A policy scored by its estimates (when it has any) and exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub name: &'static str,
    pub estimate: Option<(f64, Vec<f64>)>,
    pub exact: PolicyValues,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub dataset: Dataset,
    pub learner: LearnerOutput,
    pub values: Vec<RoundValues>,
    pub optimum: OptimalMixture,
    pub report: Vec<ReportRow>,
    pub grid: Vec<(OneShot, PolicyValues)>,
}

/// Collects a batch on the FrozenLake map, runs the learner on it and scores
/// the learned mixture, its best member, the behavior policy and the exact
/// constrained optimum.
pub fn frozenlake_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    config.validate()?;
    let mdp = build_frozenlake(&config.layout)?.with_gamma(config.learner.gamma)?;
    let behavior = make_frozenlake_behavior(&mdp, config.epsilon)?;
    let options = CollectOptions::new(config.trajectories, config.horizon);
    let dataset = collect(&mdp, &behavior, options, &mut rng::stream(config.seed, "collect"))?;

    let (learner, values) = run_with_exact_values(&dataset, &config.learner, &mdp)?;
    let tau = config.learner.tau[0];
    let optimum = optimal_mixture(&mdp, tau, 10.0 * config.learner.budget, 1e-10)?;

    let mut report = vec![ReportRow {
        name: "mixture",
        estimate: Some((learner.mixture.c_hat(), learner.mixture.g_hat())),
        exact: exact_policy_values(&mdp, &learner.mixture)?,
    }];
    if let Some(i) = learner.mixture.best_member(&config.learner.tau) {
        let mix = &learner.mixture;
        report.push(ReportRow {
            name: "best_member",
            estimate: Some((mix.member_c_hat()[i], mix.member_g_hat()[i].clone())),
            exact: exact_policy_values(&mdp, &mix.members()[i])?,
        });
    }
    // The behavior policy is evaluated on its own data: the plain average of
    // discounted returns.
    let on_policy_c = pdis(&dataset, &behavior, &CostSelector::Primary, config.learner.gamma)?;
    let on_policy_g = pdis(&dataset, &behavior, &CostSelector::Constraint(0), config.learner.gamma)?;
    report.push(ReportRow {
        name: "behavior",
        estimate: Some((on_policy_c, vec![on_policy_g])),
        exact: exact_policy_values(&mdp, &behavior)?,
    });
    report.push(ReportRow { name: "optimum", estimate: None, exact: optimum.values.clone() });

    let grid = match &config.grid {
        Some(points) => {
            // The sweep always ends with the learner's own averaged multipliers.
            let mut points = points.clone();
            points.push(learner.multipliers_hat().to_vec());
            let shots = grid_search_parallel(&dataset, &points, &config.learner, Some(&mdp), config.jobs)?;
            shots
                .into_iter()
                .map(|s| {
                    let v = exact_policy_values(&mdp, &s.policy)?;
                    Ok((s, v))
                })
                .collect::<Result<Vec<_>>>()?
        }
        None => Vec::new(),
    };
    Ok(ExperimentOutput { dataset, learner, values, optimum, report, grid })
}

pub fn report_table(rows: &[ReportRow]) -> (Vec<String>, Vec<Vec<String>>) {
    let m = rows.first().map_or(0, |r| r.exact.g.len());
    let mut header = vec!["policy".to_string(), "C_hat".into()];
    header.extend((1..=m).map(|i| format!("G_hat_{i}")));
    header.push("C".into());
    header.extend((1..=m).map(|i| format!("G_{i}")));
    let rows = rows
        .iter()
        .map(|r| {
            let mut row = vec![r.name.to_string()];
            match &r.estimate {
                Some((c, g)) => {
                    row.push(real(*c));
                    row.extend(g.iter().map(|x| real(*x)));
                }
                None => row.extend(std::iter::repeat_n(String::new(), m + 1)),
            }
            row.push(real(r.exact.c));
            row.extend(r.exact.g.iter().map(|x| real(*x)));
            row
        })
        .collect();
    (header, rows)
}

pub fn grid_table(grid: &[(OneShot, PolicyValues)]) -> (Vec<String>, Vec<Vec<String>>) {
    let m = grid.first().map_or(0, |g| g.0.lambda.len());
    let mut header: Vec<String> = (1..=m).map(|i| format!("lambda_{i}")).collect();
    header.push("C_hat".into());
    header.extend((1..=m).map(|i| format!("G_hat_{i}")));
    header.push("C".into());
    header.extend((1..=m).map(|i| format!("G_{i}")));
    let rows = grid
        .iter()
        .map(|(s, v)| {
            let mut row: Vec<String> = s.lambda.iter().map(|x| real(*x)).collect();
            row.push(real(s.c_hat));
            row.extend(s.g_hat.iter().map(|x| real(*x)));
            row.push(real(v.c));
            row.extend(v.g.iter().map(|x| real(*x)));
            row
        })
        .collect();
    (header, rows)
}
