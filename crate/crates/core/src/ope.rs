//! Importance-sampling off-policy estimators (per-decision IS, doubly robust,
//! weighted doubly robust) and the subsampling comparison against FQE.
//!
//! All estimators work on whole trajectories. A trajectory that ends with
//! `done = false` was cut off at the horizon; the doubly robust estimators
//! close it with the control variate `V(x_T)` of its last successor, while a
//! terminated trajectory closes with 0.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::approx::QFunction;
use crate::dataset::{subsample, Dataset, TransitionSample};
use crate::error::{bail, Result};
use crate::exact::exact_policy_values;
use crate::fitted::{fqe, FitParams};
use crate::mdp::{CostSelector, TabularMdp};
use crate::policy::{DeterministicPolicy, StochasticPolicy};
use crate::rng;

fn ratio(policy: &StochasticPolicy, s: &TransitionSample) -> Result<f64> {
    if !(s.behavior_prob > 0.0) {
        bail!(Data, "trajectory {} step {} has zero behavior probability", s.traj_id, s.t);
    }
    if s.x >= policy.num_states() || s.a >= policy.num_actions() {
        bail!(Argument, "logged pair ({}, {}) is outside the evaluation policy", s.x, s.a);
    }
    Ok(policy.prob(s.x, s.a) / s.behavior_prob)
}

fn check(dataset: &Dataset, cost: &CostSelector, gamma: f64) -> Result<()> {
    if dataset.num_trajectories() == 0 {
        bail!(Argument, "dataset has no trajectories");
    }
    if !(gamma > 0.0 && gamma < 1.0) {
        bail!(Argument, "discount must lie in (0, 1), got {gamma}");
    }
    cost.validate(dataset.num_constraints())
}

fn state_value(q: &QFunction, policy: &StochasticPolicy, x: usize) -> f64 {
    (0..policy.num_actions()).map(|a| policy.prob(x, a) * q.value(x, a)).sum()
}

/// Per-decision importance sampling:
/// mean over trajectories of `sum_t gamma^t (prod_{s<=t} rho_s) cost_t`.
pub fn pdis(dataset: &Dataset, eval: &StochasticPolicy, cost: &CostSelector, gamma: f64) -> Result<f64> {
    check(dataset, cost, gamma)?;
    let mut total = 0.0;
    for i in 0..dataset.num_trajectories() {
        let (mut w, mut discount, mut ret) = (1.0, 1.0, 0.0);
        for s in dataset.trajectory(i) {
            w *= ratio(eval, s)?;
            ret += discount * w * cost.apply(s.c, &s.g);
            discount *= gamma;
        }
        total += ret;
    }
    Ok(total / dataset.num_trajectories() as f64)
}

/// Doubly robust estimate with control variates from `q_hat`, by the
/// backward recursion `DR_t = V(x_t) + rho_t (cost_t + gamma DR_{t+1} - Q(x_t, a_t))`.
pub fn doubly_robust(dataset: &Dataset, eval: &StochasticPolicy, q_hat: &QFunction, cost: &CostSelector, gamma: f64) -> Result<f64> {
    check(dataset, cost, gamma)?;
    let mut total = 0.0;
    for i in 0..dataset.num_trajectories() {
        let traj = dataset.trajectory(i);
        let last = traj.last().expect("trajectories are non-empty");
        let mut dr = if last.done { 0.0 } else { state_value(q_hat, eval, last.x_next) };
        for s in traj.iter().rev() {
            let rho = ratio(eval, s)?;
            dr = state_value(q_hat, eval, s.x) + rho * (cost.apply(s.c, &s.g) + gamma * dr - q_hat.value(s.x, s.a));
        }
        total += dr;
    }
    Ok(total / dataset.num_trajectories() as f64)
}

/// Weighted doubly robust: the doubly robust sum with cumulative weights
/// normalized across trajectories at every step. A trajectory's weight stays
/// frozen after it ends. When every weight at some step is zero, the
/// importance-weighted terms of that step vanish and only control variates
/// remain.
pub fn weighted_doubly_robust(
    dataset: &Dataset,
    eval: &StochasticPolicy,
    q_hat: &QFunction,
    cost: &CostSelector,
    gamma: f64,
) -> Result<f64> {
    check(dataset, cost, gamma)?;
    let n = dataset.num_trajectories();
    let horizon = dataset.max_trajectory_len();
    // weights[i][t] = prod_{s <= min(t, T_i - 1)} rho_{i,s}
    let mut weights = vec![vec![0.0; horizon]; n];
    for (i, row) in weights.iter_mut().enumerate() {
        let traj = dataset.trajectory(i);
        let mut w = 1.0;
        for (t, slot) in row.iter_mut().enumerate() {
            if let Some(s) = traj.get(t) {
                w *= ratio(eval, s)?;
            }
            *slot = w;
        }
    }
    let totals: Vec<f64> = (0..horizon).map(|t| weights.iter().map(|r| r[t]).sum()).collect();
    let normalized = |i: usize, t: Option<usize>| match t {
        None => 1.0 / n as f64,
        Some(t) if totals[t] > 0.0 => weights[i][t] / totals[t],
        Some(_) => 0.0,
    };
    let mut estimate = 0.0;
    for i in 0..n {
        let traj = dataset.trajectory(i);
        let mut discount = 1.0;
        for (t, s) in traj.iter().enumerate() {
            let prev = t.checked_sub(1);
            estimate += discount
                * (normalized(i, Some(t)) * (cost.apply(s.c, &s.g) - q_hat.value(s.x, s.a))
                    + normalized(i, prev) * state_value(q_hat, eval, s.x));
            discount *= gamma;
        }
        let last = traj.last().expect("trajectories are non-empty");
        if !last.done {
            estimate += discount * normalized(i, Some(traj.len() - 1)) * state_value(q_hat, eval, last.x_next);
        }
    }
    Ok(estimate)
}

// ── Comparison protocol ─────────────────────────────────────────────────

/// Where the doubly robust control variates come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControlVariate {
    /// FQE on the same (sub)sample the estimator runs on.
    SameData,
    /// Two-fold cross-fitting over alternating trajectories.
    CrossFit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OpeConfig {
    pub gamma: f64,
    pub fqe_iterations: usize,
    pub ridge: f64,
    pub cost: CostSelector,
    pub seed: u64,
    pub control_variate: ControlVariate,
}

impl OpeConfig {
    pub fn new(gamma: f64, cost: CostSelector) -> Self {
        Self {
            gamma,
            fqe_iterations: crate::fitted::DEFAULT_ITERATIONS,
            ridge: 0.0,
            cost,
            seed: 0,
            control_variate: ControlVariate::SameData,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum OpeMethod {
    Fqe,
    Pdis,
    Dr,
    Wdr,
}

impl OpeMethod {
    pub const ALL: [OpeMethod; 4] = [OpeMethod::Fqe, OpeMethod::Pdis, OpeMethod::Dr, OpeMethod::Wdr];

    pub fn name(self) -> &'static str {
        match self {
            OpeMethod::Fqe => "FQE",
            OpeMethod::Pdis => "PDIS",
            OpeMethod::Dr => "DR",
            OpeMethod::Wdr => "WDR",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OpeRecord {
    pub method: OpeMethod,
    pub fraction: f64,
    pub trial: usize,
    pub estimate: f64,
    pub abs_error: f64,
}

fn fqe_q(data: &Dataset, policy: &DeterministicPolicy, mdp: &TabularMdp, config: &OpeConfig) -> Result<(f64, QFunction)> {
    let template = QFunction::tabular_zeros(mdp.num_states(), mdp.num_actions());
    let params = FitParams { gamma: config.gamma, iterations: config.fqe_iterations, ridge: config.ridge };
    let (est, run) = fqe(data, policy, &config.cost, &template, &params, Some(mdp.initial_distribution()))?;
    Ok((est, run.q_final))
}

fn split(data: &Dataset) -> Result<(Dataset, Dataset)> {
    let (mut even, mut odd) = (Vec::new(), Vec::new());
    for i in 0..data.num_trajectories() {
        let dest = if i % 2 == 0 { &mut even } else { &mut odd };
        dest.extend_from_slice(data.trajectory(i));
    }
    Ok((Dataset::new(data.num_constraints(), even)?, Dataset::new(data.num_constraints(), odd)?))
}

/// All four estimates on one (sub)sample, in [`OpeMethod::ALL`] order.
pub fn estimate_all(data: &Dataset, policy: &DeterministicPolicy, mdp: &TabularMdp, config: &OpeConfig) -> Result<[f64; 4]> {
    let stochastic = policy.to_stochastic();
    let (fqe_est, q) = fqe_q(data, policy, mdp, config)?;
    let pdis_est = pdis(data, &stochastic, &config.cost, config.gamma)?;
    let (dr, wdr) = match config.control_variate {
        ControlVariate::SameData => (
            doubly_robust(data, &stochastic, &q, &config.cost, config.gamma)?,
            weighted_doubly_robust(data, &stochastic, &q, &config.cost, config.gamma)?,
        ),
        ControlVariate::CrossFit if data.num_trajectories() >= 2 => {
            let (a, b) = split(data)?;
            let (_, qa) = fqe_q(&a, policy, mdp, config)?;
            let (_, qb) = fqe_q(&b, policy, mdp, config)?;
            let (na, nb) = (a.num_trajectories() as f64, b.num_trajectories() as f64);
            let mix = |x: f64, y: f64| (na * x + nb * y) / (na + nb);
            (
                mix(
                    doubly_robust(&a, &stochastic, &qb, &config.cost, config.gamma)?,
                    doubly_robust(&b, &stochastic, &qa, &config.cost, config.gamma)?,
                ),
                mix(
                    weighted_doubly_robust(&a, &stochastic, &qb, &config.cost, config.gamma)?,
                    weighted_doubly_robust(&b, &stochastic, &qa, &config.cost, config.gamma)?,
                ),
            )
        }
        ControlVariate::CrossFit => bail!(Argument, "cross-fitting needs at least two trajectories"),
    };
    Ok([fqe_est, pdis_est, dr, wdr])
}

/// Label of the random stream used by one comparison trial.
pub fn trial_label(fraction_index: usize, trial: usize) -> String {
    format!("ope/{fraction_index}/{trial}")
}

/// One trial: subsample, estimate with every method, score against `truth`.
pub fn ope_trial(
    dataset: &Dataset,
    policy: &DeterministicPolicy,
    mdp: &TabularMdp,
    fractions: &[f64],
    fraction_index: usize,
    trial: usize,
    truth: f64,
    config: &OpeConfig,
) -> Result<Vec<OpeRecord>> {
    let fraction = fractions[fraction_index];
    let mut stream = rng::stream(config.seed, &trial_label(fraction_index, trial));
    let sample = subsample(dataset, fraction, &mut stream)?;
    let estimates = estimate_all(&sample, policy, mdp, config)?;
    Ok(OpeMethod::ALL
        .iter()
        .zip(estimates)
        .map(|(&method, estimate)| OpeRecord { method, fraction, trial, estimate, abs_error: (estimate - truth).abs() })
        .collect())
}

/// The exact value the comparison scores against.
pub fn ope_truth(policy: &DeterministicPolicy, mdp: &TabularMdp, config: &OpeConfig) -> Result<f64> {
    let mdp = mdp.clone().with_gamma(config.gamma)?;
    let v = exact_policy_values(&mdp, policy)?;
    Ok(config.cost.apply(v.c, &v.g))
}

/// Every `(fraction, trial)` pair in order; records are grouped by fraction,
/// then trial, then method.
pub fn ope_comparison(
    dataset: &Dataset,
    policy: &DeterministicPolicy,
    mdp: &TabularMdp,
    fractions: &[f64],
    trials: usize,
    config: &OpeConfig,
) -> Result<Vec<OpeRecord>> {
    config.cost.validate(dataset.num_constraints())?;
    let truth = ope_truth(policy, mdp, config)?;
    let mut out = Vec::with_capacity(fractions.len() * trials * 4);
    for fi in 0..fractions.len() {
        for trial in 0..trials {
            out.extend(ope_trial(dataset, policy, mdp, fractions, fi, trial, truth, config)?);
        }
    }
    Ok(out)
}

/// Median of `values` (mean of the middle pair for even counts).
pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 { values[n / 2] } else { 0.5 * (values[n / 2 - 1] + values[n / 2]) })
}
