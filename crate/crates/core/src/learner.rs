//! The constrained batch learner: a Lagrangian game between a best-response
//! oracle and a no-regret dual player, stopped by the empirical duality gap.
//!
//! Each round `t`:
//!
//! 1. `pi_t` best-responds to `lambda_t`; its estimates `C(pi_t)`, `G(pi_t)`
//!    are computed once and cached.
//! 2. The mixture `pi_hat_t` is the uniform average of `pi_1..pi_t`; its
//!    estimates are the averages of member estimates.
//! 3. `lambda_hat_t` is the average of `lambda_1..lambda_t`, and `pi_tilde`
//!    best-responds to it (evaluation only, never added to the mixture).
//! 4. `L_max = C(pi_hat) + max_lambda lambda^T (G(pi_hat) - tau)` and
//!    `L_min = C(pi_tilde) + lambda_hat^T (G(pi_tilde) - tau)`; stop when
//!    `L_max - L_min <= omega`.
//! 5. Otherwise the dual player updates on `z_t = [G(pi_t) - tau, 0]`.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::approx::{FeatureMap, QFunction, DEFAULT_RIDGE};
use crate::dataset::Dataset;
use crate::dual::{bound_eta, bound_rounds, eg_init, ogd_init, DualFlavor};
use crate::error::{bail, Result};
use crate::fitted::{EmpiricalModel, FittedSolver, LstdqSolver, DEFAULT_ITERATIONS, DEFAULT_LSPI_EPS, DEFAULT_LSPI_MAX_ITERS};
use crate::mdp::{TabularMdp, FROZENLAKE_GAMMA};
use crate::oracle::{ExactOracle, FittedOracle, GameOracle, LspiOracle, Member};
use crate::policy::{DeterministicPolicy, MixturePolicy};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubroutineFlavor {
    /// FQI best responses, FQE evaluation.
    Fitted,
    /// LSPI best responses, LSTDQ evaluation.
    Lspi,
    /// Exact best responses and exact values on a known MDP.
    Exact,
}

/// Direction of the dual step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DualSign {
    /// The dual player maximizes `lambda^T z`: mass moves toward violated
    /// constraints.
    Ascent,
    /// The update formulas applied to `z` verbatim (`e^{-eta z}` for EG, a
    /// descent step for OGD).
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FunctionClass {
    Tabular,
    /// Linear with indicator features; the only class LSPI uses here.
    OneHotLinear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnerConfig {
    pub budget: f64,
    pub eta: f64,
    pub omega: f64,
    pub tau: Vec<f64>,
    pub k_fqi: usize,
    pub k_fqe: usize,
    /// `None` uses `ceil(16 B^2 G_bar^2 ln(m+1) / omega^2)`.
    pub max_rounds: Option<u64>,
    pub ridge: f64,
    /// Seeds the random initial Q-functions when `random_init` is set.
    pub seed: u64,
    pub gamma: f64,
    pub dual_flavor: DualFlavor,
    pub dual_sign: DualSign,
    pub subroutine: SubroutineFlavor,
    pub function_class: FunctionClass,
    pub random_init: bool,
    /// Clip fitted values to `max |c| / (1 - gamma)` (the scalarized cost's
    /// bound for best responses).
    pub clip_values: bool,
    /// Overrides `max |g| / (1 - gamma)`.
    pub g_bar: Option<f64>,
    pub lspi_eps: f64,
    pub lspi_max_iters: usize,
    /// Keep every `trace_every`-th round in the trace (first and last are
    /// always kept).
    pub trace_every: u64,
}

impl LearnerConfig {
    pub fn new(tau: Vec<f64>, budget: f64, eta: f64, omega: f64) -> Self {
        Self {
            budget,
            eta,
            omega,
            tau,
            k_fqi: DEFAULT_ITERATIONS,
            k_fqe: DEFAULT_ITERATIONS,
            max_rounds: None,
            ridge: DEFAULT_RIDGE,
            seed: 0,
            gamma: FROZENLAKE_GAMMA,
            dual_flavor: DualFlavor::EgSimplex,
            dual_sign: DualSign::Ascent,
            subroutine: SubroutineFlavor::Fitted,
            function_class: FunctionClass::Tabular,
            random_init: false,
            clip_values: false,
            g_bar: None,
            lspi_eps: DEFAULT_LSPI_EPS,
            lspi_max_iters: DEFAULT_LSPI_MAX_ITERS,
            trace_every: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("budget", self.budget), ("learning rate", self.eta), ("omega", self.omega)] {
            if !(v > 0.0 && v.is_finite()) {
                bail!(Argument, "{name} must be positive and finite, got {v}");
            }
        }
        if self.tau.iter().any(|t| !(*t >= 0.0 && t.is_finite())) {
            bail!(Argument, "constraint thresholds must be finite and non-negative");
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            bail!(Argument, "discount must lie in (0, 1), got {}", self.gamma);
        }
        if self.k_fqi == 0 || self.k_fqe == 0 {
            bail!(Argument, "iteration counts must be at least 1");
        }
        if !(self.ridge >= 0.0 && self.ridge.is_finite()) {
            bail!(Argument, "ridge must be finite and non-negative");
        }
        if self.max_rounds == Some(0) {
            bail!(Argument, "round limit must be at least 1");
        }
        if self.trace_every == 0 {
            bail!(Argument, "trace stride must be at least 1");
        }
        if let Some(g) = self.g_bar {
            if !(g >= 0.0 && g.is_finite()) {
                bail!(Argument, "constraint bound must be finite and non-negative");
            }
        }
        if self.subroutine == SubroutineFlavor::Lspi && self.function_class != FunctionClass::OneHotLinear {
            bail!(Argument, "LSPI needs a linear function class");
        }
        Ok(())
    }
}

/// One round of the game.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round: u64,
    /// `lambda_t` as stored by the dual player (`m + 1` coordinates for EG).
    pub lambda: Vec<f64>,
    pub lambda_hat: Vec<f64>,
    /// Registry id and estimates of `pi_t`.
    pub member: usize,
    pub member_c: f64,
    pub member_g: Vec<f64>,
    /// Estimates of the mixture `pi_hat_t`.
    pub c_hat: f64,
    pub g_hat: Vec<f64>,
    /// Registry id of `pi_tilde`.
    pub tilde: usize,
    pub l_max: f64,
    pub l_min: f64,
    /// `L(pi_hat_t, lambda_hat_t)`.
    pub l_mixture: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Converged,
    RoundLimit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub records: Vec<RoundRecord>,
    pub termination: Termination,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnerOutput {
    pub mixture: MixturePolicy,
    pub trace: RunTrace,
    /// The final `pi_tilde` and its estimates.
    pub pi_tilde: Member,
    pub lambda_hat: Vec<f64>,
    pub rounds: u64,
    pub g_bar: f64,
    pub eta: f64,
    pub max_rounds: u64,
}

impl LearnerOutput {
    pub fn converged(&self) -> bool {
        self.trace.termination == Termination::Converged
    }

    pub fn final_record(&self) -> &RoundRecord {
        self.trace.records.last().expect("a run has at least one round")
    }

    /// `lambda_hat` restricted to the `m` constraint multipliers.
    pub fn multipliers_hat(&self) -> &[f64] {
        &self.lambda_hat[..self.mixture.member_g_hat().first().map_or(0, Vec::len)]
    }
}

// ── Lagrangian pieces ───────────────────────────────────────────────────

/// `C + B max(0, max_i (G_i - tau_i))`: the maximizing multiplier puts its
/// whole budget on the largest coordinate of `[G - tau, 0]`.
pub fn lagrangian_max(c_hat: f64, g_hat: &[f64], tau: &[f64], budget: f64) -> f64 {
    let worst = g_hat.iter().zip(tau).fold(0.0f64, |m, (g, t)| m.max(g - t));
    c_hat + budget * worst
}

/// `C + B ||max(0, G - tau)||_2`: the maximum over non-negative multipliers in
/// the ℓ2 ball.
pub fn lagrangian_max_ball(c_hat: f64, g_hat: &[f64], tau: &[f64], budget: f64) -> f64 {
    let sq: f64 = g_hat.iter().zip(tau).map(|(g, t)| (g - t).max(0.0)).map(|v| v * v).sum();
    c_hat + budget * libm::sqrt(sq)
}

/// `C + lambda^T (G - tau)` with `lambda` of length `m` (the budget
/// coordinate multiplies zero).
pub fn lagrangian(c_hat: f64, g_hat: &[f64], tau: &[f64], lambda: &[f64]) -> f64 {
    c_hat + lambda.iter().zip(g_hat.iter().zip(tau)).map(|(l, (g, t))| l * (g - t)).sum::<f64>()
}

/// Best response to `lambda_hat` and its Lagrangian value.
pub fn lagrangian_min<O: GameOracle + ?Sized>(oracle: &mut O, lambda_hat: &[f64], tau: &[f64]) -> Result<(f64, usize)> {
    let id = oracle.best_response(lambda_hat)?;
    let member = oracle.member(id);
    Ok((lagrangian(member.c_hat, &member.g_hat, tau, lambda_hat), id))
}

/// `max_i |g_i| / (1 - gamma)` over the batch.
pub fn g_bar_from_dataset(dataset: &Dataset, gamma: f64) -> f64 {
    dataset.max_abs_constraint_cost() / (1.0 - gamma)
}

/// `max g / (1 - gamma)` over the MDP's constraint tables.
pub fn g_bar_from_mdp(mdp: &TabularMdp) -> f64 {
    mdp.max_constraint_cost() / (1.0 - mdp.gamma())
}

/// Neumaier-compensated running sum; the game can run for billions of rounds.
#[derive(Debug, Clone, Copy, Default)]
struct Compensated {
    sum: f64,
    comp: f64,
}

impl Compensated {
    #[inline]
    fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

// ── The game ────────────────────────────────────────────────────────────

/// Plays the game against `oracle` until the gap drops to `omega` or the
/// round limit. `observer` sees every round.
pub fn play<O, F>(oracle: &mut O, config: &LearnerConfig, g_bar: f64, mut observer: F) -> Result<LearnerOutput>
where
    O: GameOracle + ?Sized,
    F: FnMut(&RoundRecord),
{
    config.validate()?;
    let m = oracle.num_constraints();
    if config.tau.len() != m {
        bail!(Argument, "{} thresholds given for {m} constraints", config.tau.len());
    }
    let max_rounds = config.max_rounds.unwrap_or_else(|| bound_rounds(config.budget, g_bar, m, config.omega));
    let tau = &config.tau;
    let budget = config.budget;
    let mut lambda = match config.dual_flavor {
        DualFlavor::EgSimplex => eg_init(m, budget)?,
        DualFlavor::OgdBall => ogd_init(m, budget)?,
    };
    let dim = lambda.coords().len();
    let sign = match config.dual_sign {
        DualSign::Ascent => 1.0,
        DualSign::Literal => -1.0,
    };
    // EG applies e^{-eta z}; OGD steps along +z.
    let eg = config.dual_flavor == DualFlavor::EgSimplex;
    let z_sign = if eg { -sign } else { sign };

    let mut counts: Vec<u64> = Vec::new();
    let mut c_sum = Compensated::default();
    let mut g_sum = vec![Compensated::default(); m];
    let mut lambda_sum = vec![Compensated::default(); dim];
    let mut z = vec![0.0; dim];
    let mut lambda_hat = vec![0.0; dim];
    let mut record = RoundRecord {
        round: 0,
        lambda: vec![0.0; dim],
        lambda_hat: vec![0.0; dim],
        member: 0,
        member_c: 0.0,
        member_g: vec![0.0; m],
        c_hat: 0.0,
        g_hat: vec![0.0; m],
        tilde: 0,
        l_max: 0.0,
        l_min: 0.0,
        l_mixture: 0.0,
        gap: 0.0,
    };
    let mut records = Vec::new();
    let mut termination = Termination::RoundLimit;
    let mut round = 0u64;
    let mut until_trace = config.trace_every;
    while round < max_rounds {
        round += 1;
        let id = oracle.best_response(&lambda.coords()[..m])?;
        if id >= counts.len() {
            counts.resize(id + 1, 0);
        }
        counts[id] += 1;
        let member = oracle.member(id);
        c_sum.add(member.c_hat);
        for (s, g) in g_sum.iter_mut().zip(&member.g_hat) {
            s.add(*g);
        }
        for (s, l) in lambda_sum.iter_mut().zip(lambda.coords()) {
            s.add(*l);
        }
        let inv_t = 1.0 / round as f64;
        for (h, s) in lambda_hat.iter_mut().zip(&lambda_sum) {
            *h = s.value() * inv_t;
        }
        record.round = round;
        record.lambda.copy_from_slice(lambda.coords());
        record.lambda_hat.copy_from_slice(&lambda_hat);
        record.member = id;
        record.member_c = member.c_hat;
        record.member_g.copy_from_slice(&member.g_hat);
        record.c_hat = c_sum.value() * inv_t;
        for (h, s) in record.g_hat.iter_mut().zip(&g_sum) {
            *h = s.value() * inv_t;
        }
        record.l_max = if eg {
            lagrangian_max(record.c_hat, &record.g_hat, tau, budget)
        } else {
            lagrangian_max_ball(record.c_hat, &record.g_hat, tau, budget)
        };
        let (l_min, tilde) = lagrangian_min(oracle, &lambda_hat[..m], tau)?;
        record.tilde = tilde;
        record.l_min = l_min;
        record.l_mixture = lagrangian(record.c_hat, &record.g_hat, tau, &lambda_hat[..m]);
        record.gap = record.l_max - record.l_min;
        observer(&record);

        let done = record.gap <= config.omega;
        until_trace -= 1;
        if round == 1 || until_trace == 0 || done || round == max_rounds {
            if until_trace == 0 {
                until_trace = config.trace_every;
            }
            records.push(record.clone());
        }
        if done {
            termination = Termination::Converged;
            break;
        }
        if round == max_rounds {
            break;
        }
        for (zi, (g, t)) in z.iter_mut().zip(record.member_g.iter().zip(tau)) {
            *zi = z_sign * (g - t);
        }
        lambda.update_in_place(&z, config.eta);
    }

    let mut mixture = MixturePolicy::empty();
    for (id, &n) in counts.iter().enumerate().filter(|(_, n)| **n > 0) {
        let member = oracle.member(id);
        mixture.push_entry(member.policy.clone(), n, member.c_hat, member.g_hat.clone());
    }
    let last = records.last().expect("at least one round is played");
    Ok(LearnerOutput {
        mixture,
        pi_tilde: oracle.member(last.tilde).clone(),
        lambda_hat: last.lambda_hat.clone(),
        rounds: round,
        trace: RunTrace { records, termination },
        g_bar,
        eta: config.eta,
        max_rounds,
    })
}

/// The data domain: the MDP's when given, else what the batch reveals.
fn domain(dataset: &Dataset, mdp: Option<&TabularMdp>) -> (usize, usize) {
    match mdp {
        Some(mdp) => (mdp.num_states(), mdp.num_actions()),
        None => (dataset.observed_num_states(), dataset.observed_num_actions()),
    }
}

fn template(config: &LearnerConfig, states: usize, actions: usize, bound: f64) -> QFunction {
    let base = match config.function_class {
        FunctionClass::Tabular => QFunction::tabular_zeros(states, actions),
        FunctionClass::OneHotLinear => QFunction::linear_zeros(Arc::new(FeatureMap::one_hot(states, actions))),
    };
    let base = if config.random_init { base.randomized(1.0, &mut rng::stream(config.seed, "q-init")) } else { base };
    base.with_value_bound(config.clip_values.then_some(bound))
}

fn model(dataset: &Dataset, config: &LearnerConfig, mdp: Option<&TabularMdp>) -> Result<EmpiricalModel> {
    if dataset.num_constraints() != config.tau.len() {
        bail!(Argument, "dataset has {} constraints but {} thresholds were given", dataset.num_constraints(), config.tau.len());
    }
    let (s, a) = domain(dataset, mdp);
    let model = EmpiricalModel::new(dataset, s, a)?;
    match mdp {
        Some(mdp) => model.with_initial_distribution(mdp.initial_distribution()),
        None => Ok(model),
    }
}

/// Builds the fitted (FQI + FQE) oracle for `dataset`.
pub fn fitted_oracle(dataset: &Dataset, config: &LearnerConfig, mdp: Option<&TabularMdp>) -> Result<FittedOracle> {
    config.validate()?;
    let model = model(dataset, config, mdp)?;
    let bound = (dataset.max_abs_cost() + config.budget * dataset.max_abs_constraint_cost()) / (1.0 - config.gamma);
    let template = template(config, model.num_states(), model.num_actions(), bound);
    let solver = FittedSolver::new(model, &template, config.gamma, config.ridge)?;
    FittedOracle::new(solver, config.k_fqi, config.k_fqe)
}

/// Builds the LSPI + LSTDQ oracle with indicator features.
pub fn lspi_oracle(dataset: &Dataset, config: &LearnerConfig, mdp: Option<&TabularMdp>) -> Result<LspiOracle> {
    config.validate()?;
    let model = model(dataset, config, mdp)?;
    let features = Arc::new(FeatureMap::one_hot(model.num_states(), model.num_actions()));
    let solver = LstdqSolver::new(model, features, config.gamma, config.ridge)?;
    Ok(LspiOracle::new(solver, config.lspi_eps, config.lspi_max_iters))
}

fn exact_mdp(config: &LearnerConfig, mdp: Option<&TabularMdp>) -> Result<TabularMdp> {
    match mdp {
        Some(mdp) => mdp.clone().with_gamma(config.gamma),
        None => bail!(Argument, "the exact flavor needs the MDP"),
    }
}

/// Runs the learner on `dataset` with the configured subroutines.
///
/// The exact flavor ignores the batch and solves on `mdp` instead.
pub fn run(dataset: &Dataset, config: &LearnerConfig, mdp: Option<&TabularMdp>) -> Result<LearnerOutput> {
    run_with_observer(dataset, config, mdp, |_| {})
}

pub fn run_with_observer<F: FnMut(&RoundRecord)>(
    dataset: &Dataset,
    config: &LearnerConfig,
    mdp: Option<&TabularMdp>,
    observer: F,
) -> Result<LearnerOutput> {
    config.validate()?;
    match config.subroutine {
        SubroutineFlavor::Fitted => {
            let g_bar = config.g_bar.unwrap_or_else(|| g_bar_from_dataset(dataset, config.gamma));
            play(&mut fitted_oracle(dataset, config, mdp)?, config, g_bar, observer)
        }
        SubroutineFlavor::Lspi => {
            let g_bar = config.g_bar.unwrap_or_else(|| g_bar_from_dataset(dataset, config.gamma));
            play(&mut lspi_oracle(dataset, config, mdp)?, config, g_bar, observer)
        }
        SubroutineFlavor::Exact => {
            let mdp = exact_mdp(config, mdp)?;
            let g_bar = config.g_bar.unwrap_or_else(|| g_bar_from_mdp(&mdp));
            play(&mut ExactOracle::new(mdp), config, g_bar, observer)
        }
    }
}

/// The learning rate that tunes the gap bound to `omega`, for the given
/// constraint bound.
pub fn tuned_eta(omega: f64, g_bar: f64, budget: f64) -> f64 {
    bound_eta(omega, g_bar, budget)
}

/// Exact-subroutine game on `mdp`; returns the mixture's exact primary value
/// with the full output.
pub fn exact_constrained_optimum(
    mdp: &TabularMdp,
    tau: &[f64],
    budget: f64,
    eta: f64,
    omega: f64,
    max_rounds: Option<u64>,
) -> Result<(f64, LearnerOutput)> {
    let mut config = LearnerConfig::new(tau.to_vec(), budget, eta, omega);
    config.subroutine = SubroutineFlavor::Exact;
    config.gamma = mdp.gamma();
    config.max_rounds = max_rounds;
    config.trace_every = u64::MAX;
    let out = run(&Dataset::empty(mdp.num_constraints()), &config, Some(mdp))?;
    Ok((out.mixture.c_hat(), out))
}

// ── Regularized one-shot learner ────────────────────────────────────────

/// A single best response to fixed multipliers, with its estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct OneShot {
    pub lambda: Vec<f64>,
    pub policy: DeterministicPolicy,
    pub c_hat: f64,
    pub g_hat: Vec<f64>,
}

/// One solve on `c + lambda^T g` plus certification, with the configured
/// subroutine.
pub fn regularized_one_shot(dataset: &Dataset, lambda: &[f64], config: &LearnerConfig, mdp: Option<&TabularMdp>) -> Result<OneShot> {
    config.validate()?;
    let member = match config.subroutine {
        SubroutineFlavor::Fitted => {
            let mut o = fitted_oracle(dataset, config, mdp)?;
            let id = o.best_response(lambda)?;
            o.member(id).clone()
        }
        SubroutineFlavor::Lspi => {
            let mut o = lspi_oracle(dataset, config, mdp)?;
            let id = o.best_response(lambda)?;
            o.member(id).clone()
        }
        SubroutineFlavor::Exact => {
            let mut o = ExactOracle::new(exact_mdp(config, mdp)?);
            let id = o.best_response(lambda)?;
            o.member(id).clone()
        }
    };
    Ok(OneShot { lambda: lambda.to_vec(), policy: member.policy, c_hat: member.c_hat, g_hat: member.g_hat })
}

/// `regularized_one_shot` at every grid point, in order.
pub fn grid_search(dataset: &Dataset, grid: &[Vec<f64>], config: &LearnerConfig, mdp: Option<&TabularMdp>) -> Result<Vec<OneShot>> {
    grid.iter().map(|l| regularized_one_shot(dataset, l, config, mdp)).collect()
}

/// `{start, start + step, ..., stop}` for a single constraint.
pub fn linear_grid(start: f64, stop: f64, step: f64) -> Result<Vec<Vec<f64>>> {
    if !(step > 0.0) || stop < start || start < 0.0 {
        bail!(Argument, "grid needs 0 <= start <= stop and a positive step");
    }
    let n = libm::floor((stop - start) / step + 1e-9) as usize;
    Ok((0..=n).map(|i| vec![start + step * i as f64]).collect())
}
