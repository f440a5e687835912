//! Ground truth on tabular MDPs: exact policy evaluation, value and policy
//! iteration, best responses, occupancy measures and the performance
//! difference identity.

use alloc::vec;
use alloc::vec::Vec;

use crate::approx::{greedy_in_row, QFunction};
use crate::dual::DualVector;
use crate::error::{bail, Error, Result};
use crate::linalg::Lu;
use crate::mdp::{CostSelector, TabularMdp};
use crate::policy::{DeterministicPolicy, MixturePolicy, StochasticPolicy};

/// Default sup-norm stopping tolerance of value iteration.
pub const DEFAULT_VI_TOL: f64 = 1e-10;

/// A policy switches action only when that lowers its Q-value by more than
/// this (absolute) amount, which makes policy iteration terminate cleanly in
/// the presence of exact ties.
pub const IMPROVEMENT_TOL: f64 = 1e-9;

/// `C(pi)` and `G(pi)` from the initial distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyValues {
    pub c: f64,
    pub g: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub enum PolicyRef<'a> {
    Deterministic(&'a DeterministicPolicy),
    Stochastic(&'a StochasticPolicy),
    Mixture(&'a MixturePolicy),
}

impl<'a> From<&'a DeterministicPolicy> for PolicyRef<'a> {
    fn from(p: &'a DeterministicPolicy) -> Self {
        PolicyRef::Deterministic(p)
    }
}

impl<'a> From<&'a StochasticPolicy> for PolicyRef<'a> {
    fn from(p: &'a StochasticPolicy) -> Self {
        PolicyRef::Stochastic(p)
    }
}

impl<'a> From<&'a MixturePolicy> for PolicyRef<'a> {
    fn from(p: &'a MixturePolicy) -> Self {
        PolicyRef::Mixture(p)
    }
}

fn check_shape(mdp: &TabularMdp, states: usize, actions: usize) -> Result<()> {
    if states != mdp.num_states() || actions != mdp.num_actions() {
        bail!(Argument, "policy is {states} x {actions} but the MDP is {} x {}", mdp.num_states(), mdp.num_actions());
    }
    Ok(())
}

/// Factored `I - gamma P^pi` for a policy given by `prob(x, a)`.
fn evaluation_system<F: Fn(usize, usize) -> f64>(mdp: &TabularMdp, prob: F) -> Result<Lu> {
    let s = mdp.num_states();
    let mut m = vec![0.0; s * s];
    for x in 0..s {
        m[x * s + x] += 1.0;
        for a in 0..mdp.num_actions() {
            let p = prob(x, a);
            if p == 0.0 {
                continue;
            }
            for &(y, q) in mdp.successors(x, a) {
                m[x * s + y] -= mdp.gamma() * p * q;
            }
        }
    }
    Lu::factor(s, m).map_err(|_| Error::Numerical("policy evaluation system is singular".into()))
}

fn expected_cost<F: Fn(usize, usize) -> f64>(mdp: &TabularMdp, prob: &F, cost: &CostSelector) -> Vec<f64> {
    (0..mdp.num_states()).map(|x| (0..mdp.num_actions()).map(|a| prob(x, a) * mdp.cost(cost, x, a)).sum()).collect()
}

fn channels(m: usize) -> Vec<CostSelector> {
    core::iter::once(CostSelector::Primary).chain((0..m).map(CostSelector::Constraint)).collect()
}

fn chi_dot(mdp: &TabularMdp, v: &[f64]) -> f64 {
    mdp.initial_distribution().iter().zip(v).map(|(p, v)| p * v).sum()
}

/// State values `V^pi` of `cost` for a stochastic policy.
pub fn exact_state_values(mdp: &TabularMdp, policy: &StochasticPolicy, cost: &CostSelector) -> Result<Vec<f64>> {
    check_shape(mdp, policy.num_states(), policy.num_actions())?;
    cost.validate(mdp.num_constraints())?;
    let prob = |x: usize, a: usize| policy.prob(x, a);
    let lu = evaluation_system(mdp, prob)?;
    let mut v = expected_cost(mdp, &prob, cost);
    lu.solve_in_place(&mut v);
    Ok(v)
}

/// `Q^pi(x, a) = cost(x, a) + gamma sum_x' P(x'|x,a) V^pi(x')`.
pub fn exact_q_function(mdp: &TabularMdp, policy: &StochasticPolicy, cost: &CostSelector) -> Result<QFunction> {
    let v = exact_state_values(mdp, policy, cost)?;
    Ok(backup(mdp, cost, &v))
}

fn backup(mdp: &TabularMdp, cost: &CostSelector, v: &[f64]) -> QFunction {
    let (s, na) = (mdp.num_states(), mdp.num_actions());
    let mut q = Vec::with_capacity(s * na);
    for x in 0..s {
        for a in 0..na {
            let next: f64 = mdp.successors(x, a).iter().map(|&(y, p)| p * v[y]).sum();
            q.push(mdp.cost(cost, x, a) + mdp.gamma() * next);
        }
    }
    QFunction::tabular(s, na, q).expect("shape matches the MDP")
}

/// Exact `C` and `G` of any policy; mixtures are weight-averaged over
/// members.
pub fn exact_policy_values<'a, P: Into<PolicyRef<'a>>>(mdp: &TabularMdp, policy: P) -> Result<PolicyValues> {
    match policy.into() {
        PolicyRef::Deterministic(p) => {
            check_shape(mdp, p.num_states(), p.num_actions())?;
            Ok(DeterministicEvaluation::new(mdp, p)?.values())
        }
        PolicyRef::Stochastic(p) => {
            check_shape(mdp, p.num_states(), p.num_actions())?;
            let prob = |x: usize, a: usize| p.prob(x, a);
            let lu = evaluation_system(mdp, prob)?;
            let mut out = Vec::with_capacity(mdp.num_constraints() + 1);
            for ch in channels(mdp.num_constraints()) {
                let mut v = expected_cost(mdp, &prob, &ch);
                lu.solve_in_place(&mut v);
                out.push(chi_dot(mdp, &v));
            }
            Ok(PolicyValues { c: out[0], g: out[1..].to_vec() })
        }
        PolicyRef::Mixture(mix) => {
            if mix.is_empty() {
                bail!(Argument, "cannot evaluate an empty mixture");
            }
            let mut c = 0.0;
            let mut g = vec![0.0; mdp.num_constraints()];
            for (member, w) in mix.members().iter().zip(mix.weights()) {
                let v = exact_policy_values(mdp, member)?;
                c += w * v.c;
                g.iter_mut().zip(&v.g).for_each(|(a, b)| *a += w * b);
            }
            Ok(PolicyValues { c, g })
        }
    }
}

/// Exact evaluation of a deterministic policy on every cost channel, with
/// advantages `Q^pi(x, a) - V^pi(x)` per channel.
#[derive(Debug, Clone)]
pub struct DeterministicEvaluation {
    /// `values[ch][x]`; channel 0 is `c`, channel `i + 1` is `g_i`.
    pub state_values: Vec<Vec<f64>>,
    /// `advantages[ch][x * A + a]`.
    pub advantages: Vec<Vec<f64>>,
    pub initial_values: Vec<f64>,
}

impl DeterministicEvaluation {
    pub fn new(mdp: &TabularMdp, policy: &DeterministicPolicy) -> Result<Self> {
        let lu = evaluation_system(mdp, |x, a| if policy.action(x) == a { 1.0 } else { 0.0 })?;
        let (s, na) = (mdp.num_states(), mdp.num_actions());
        let mut state_values = Vec::new();
        let mut advantages = Vec::new();
        let mut initial_values = Vec::new();
        for ch in channels(mdp.num_constraints()) {
            let mut v: Vec<f64> = (0..s).map(|x| mdp.cost(&ch, x, policy.action(x))).collect();
            lu.solve_in_place(&mut v);
            let mut adv = Vec::with_capacity(s * na);
            for x in 0..s {
                for a in 0..na {
                    let next: f64 = mdp.successors(x, a).iter().map(|&(y, p)| p * v[y]).sum();
                    adv.push(mdp.cost(&ch, x, a) + mdp.gamma() * next - v[x]);
                }
            }
            initial_values.push(chi_dot(mdp, &v));
            state_values.push(v);
            advantages.push(adv);
        }
        Ok(Self { state_values, advantages, initial_values })
    }

    pub fn values(&self) -> PolicyValues {
        PolicyValues { c: self.initial_values[0], g: self.initial_values[1..].to_vec() }
    }

    /// Advantage of `(x, a)` under the scalarized cost `c + lambda^T g`.
    #[inline]
    pub fn scalarized_advantage(&self, k: usize, lambda: &[f64]) -> f64 {
        let mut v = self.advantages[0][k];
        for (l, adv) in lambda.iter().zip(&self.advantages[1..]) {
            v += l * adv[k];
        }
        v
    }
}

// ── Optimal control ─────────────────────────────────────────────────────

/// One application of the Bellman optimality operator to a tabular table.
pub fn bellman_optimality(mdp: &TabularMdp, cost: &CostSelector, q: &[f64]) -> Vec<f64> {
    let (s, na) = (mdp.num_states(), mdp.num_actions());
    let v: Vec<f64> = (0..s).map(|x| q[x * na..(x + 1) * na].iter().copied().fold(f64::INFINITY, f64::min)).collect();
    let mut out = Vec::with_capacity(s * na);
    for x in 0..s {
        for a in 0..na {
            let next: f64 = mdp.successors(x, a).iter().map(|&(y, p)| p * v[y]).sum();
            out.push(mdp.cost(cost, x, a) + mdp.gamma() * next);
        }
    }
    out
}

/// Iterates `Q <- TQ` from zero until the sup-norm change drops below `tol`.
pub fn value_iteration(mdp: &TabularMdp, cost: &CostSelector, tol: f64) -> Result<QFunction> {
    if !(tol > 0.0) {
        bail!(Argument, "tolerance must be positive, got {tol}");
    }
    cost.validate(mdp.num_constraints())?;
    let (s, na) = (mdp.num_states(), mdp.num_actions());
    let mut q = vec![0.0; s * na];
    loop {
        let next = bellman_optimality(mdp, cost, &q);
        let change = next.iter().zip(&q).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        q = next;
        if change < tol {
            break;
        }
    }
    QFunction::tabular(s, na, q)
}

/// Policy iteration on `c + lambda^T g` from `start`; each switch must
/// improve by more than [`IMPROVEMENT_TOL`]. Returns the final policy with
/// its evaluation.
pub fn policy_iteration(
    mdp: &TabularMdp,
    lambda: &[f64],
    start: DeterministicPolicy,
) -> Result<(DeterministicPolicy, DeterministicEvaluation)> {
    CostSelector::Scalarized(lambda.to_vec()).validate(mdp.num_constraints())?;
    check_shape(mdp, start.num_states(), start.num_actions())?;
    let na = mdp.num_actions();
    let mut policy = start;
    loop {
        let eval = DeterministicEvaluation::new(mdp, &policy)?;
        let mut actions = policy.actions().to_vec();
        let mut changed = false;
        for (x, act) in actions.iter_mut().enumerate() {
            let row: Vec<f64> = (0..na).map(|a| eval.scalarized_advantage(x * na + a, lambda)).collect();
            let best = greedy_in_row(row.iter().copied());
            if row[best] < -IMPROVEMENT_TOL {
                *act = best;
                changed = true;
            }
        }
        if !changed {
            return Ok((policy, eval));
        }
        policy = DeterministicPolicy::new(actions, na)?;
    }
}

/// An optimal deterministic policy for `cost`: greedy in value iteration's
/// `Q`, then polished by policy iteration so near-ties cannot leave it
/// suboptimal.
pub fn optimal_policy(mdp: &TabularMdp, cost: &CostSelector) -> Result<DeterministicPolicy> {
    let mut pi = value_iteration(mdp, cost, DEFAULT_VI_TOL)?.greedy_policy();
    loop {
        let q = exact_q_function(mdp, &pi.to_stochastic(), cost)?;
        let mut actions = pi.actions().to_vec();
        let mut changed = false;
        for (x, act) in actions.iter_mut().enumerate() {
            let best = q.greedy_action(x);
            if q.value(x, best) < q.value(x, *act) - IMPROVEMENT_TOL {
                *act = best;
                changed = true;
            }
        }
        if !changed {
            return Ok(pi);
        }
        pi = DeterministicPolicy::new(actions, mdp.num_actions())?;
    }
}

/// `argmin_pi C(pi) + lambda^T (G(pi) - tau)` over deterministic policies.
/// The `tau` term and the budget coordinate do not change the minimizer.
pub fn exact_best_response(mdp: &TabularMdp, lambda: &DualVector) -> Result<DeterministicPolicy> {
    if lambda.num_constraints() != mdp.num_constraints() {
        bail!(Argument, "multipliers have {} constraints, the MDP has {}", lambda.num_constraints(), mdp.num_constraints());
    }
    optimal_policy(mdp, &CostSelector::Scalarized(lambda.multipliers().to_vec()))
}

/// Normalized discounted state occupancy `d` solving
/// `d^T (I - gamma P^pi) = (1 - gamma) chi^T`.
pub fn occupancy_measure(mdp: &TabularMdp, policy: &StochasticPolicy) -> Result<Vec<f64>> {
    check_shape(mdp, policy.num_states(), policy.num_actions())?;
    let lu = evaluation_system(mdp, |x, a| policy.prob(x, a))?;
    let mut d: Vec<f64> = mdp.initial_distribution().iter().map(|p| (1.0 - mdp.gamma()) * p).collect();
    lu.solve_transpose_in_place(&mut d);
    Ok(d)
}

/// `|(C^pi - C*) - E_{x ~ d_pi}[Q*(x, pi) - V*(x)] / (1 - gamma)|` on the
/// primary cost, all terms computed exactly.
pub fn performance_difference_check(mdp: &TabularMdp, policy: &StochasticPolicy) -> Result<f64> {
    let star = optimal_policy(mdp, &CostSelector::Primary)?;
    let v_star = exact_state_values(mdp, &star.to_stochastic(), &CostSelector::Primary)?;
    let q_star = backup(mdp, &CostSelector::Primary, &v_star);
    let c_pi = chi_dot(mdp, &exact_state_values(mdp, policy, &CostSelector::Primary)?);
    let c_star = chi_dot(mdp, &v_star);
    let d = occupancy_measure(mdp, policy)?;
    let mut expected_adv = 0.0;
    for (x, dx) in d.iter().enumerate() {
        let q_pi: f64 = (0..mdp.num_actions()).map(|a| policy.prob(x, a) * q_star.value(x, a)).sum();
        expected_adv += dx * (q_pi - v_star[x]);
    }
    Ok(((c_pi - c_star) - expected_adv / (1.0 - mdp.gamma())).abs())
}

/// Value of the concave dual `D(lambda) = min_pi C(pi) + lambda (G(pi) - tau)`
/// for a single constraint.
pub fn dual_function(mdp: &TabularMdp, tau: f64, lambda: f64) -> Result<f64> {
    let cost = CostSelector::Scalarized(vec![lambda]);
    let v = exact_policy_values(mdp, &optimal_policy(mdp, &cost)?)?;
    Ok(v.c + lambda * (v.g[0] - tau))
}

/// Constrained optimum over mixtures for one constraint, by golden-section
/// maximization of the dual on `[0, lambda_max]`. Finite MDPs have no duality
/// gap, so the maximum is `min { C(pi) : G(pi) <= tau }` whenever the
/// maximizing multiplier lies below `lambda_max`. Returns `(value, lambda)`.
pub fn dual_optimum(mdp: &TabularMdp, tau: f64, lambda_max: f64, tol: f64) -> Result<(f64, f64)> {
    if mdp.num_constraints() != 1 {
        bail!(Argument, "the dual search handles exactly one constraint, the MDP has {}", mdp.num_constraints());
    }
    if !(lambda_max > 0.0 && lambda_max.is_finite() && tol > 0.0) {
        bail!(Argument, "dual search needs a finite positive range and tolerance");
    }
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let d = |l: f64| dual_function(mdp, tau, l);
    let (mut lo, mut hi) = (0.0, lambda_max);
    let mut best = (d(lo)?, lo);
    let end = d(hi)?;
    if end > best.0 {
        best = (end, hi);
    }
    let mut a = hi - INV_PHI * (hi - lo);
    let mut b = lo + INV_PHI * (hi - lo);
    let (mut fa, mut fb) = (d(a)?, d(b)?);
    while hi - lo > tol {
        if fa < fb {
            lo = a;
            a = b;
            fa = fb;
            b = lo + INV_PHI * (hi - lo);
            fb = d(b)?;
        } else {
            hi = b;
            b = a;
            fb = fa;
            a = hi - INV_PHI * (hi - lo);
            fa = d(a)?;
        }
        for (v, l) in [(fa, a), (fb, b)] {
            if v > best.0 {
                best = (v, l);
            }
        }
    }
    Ok(best)
}

/// The single-constraint optimum realized as a mixture of at most two
/// deterministic policies.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimalMixture {
    /// Members with their mixing weights (summing to one).
    pub members: Vec<(DeterministicPolicy, f64)>,
    pub values: PolicyValues,
    pub lambda: f64,
}

/// Locates the optimal multiplier with [`dual_optimum`], then mixes the best
/// responses just below and just above it so the constraint holds with
/// equality (or takes the lower one alone when it is already feasible).
pub fn optimal_mixture(mdp: &TabularMdp, tau: f64, lambda_max: f64, tol: f64) -> Result<OptimalMixture> {
    let (_, lambda) = dual_optimum(mdp, tau, lambda_max, tol)?;
    let delta = 1e-6 * (1.0 + lambda);
    let respond = |l: f64| -> Result<(DeterministicPolicy, PolicyValues)> {
        let pi = optimal_policy(mdp, &CostSelector::Scalarized(vec![l]))?;
        let v = exact_policy_values(mdp, &pi)?;
        Ok((pi, v))
    };
    let (lo, v_lo) = respond((lambda - delta).max(0.0))?;
    if v_lo.g[0] <= tau {
        return Ok(OptimalMixture { members: vec![(lo, 1.0)], values: v_lo, lambda });
    }
    let (hi, v_hi) = respond(lambda + delta)?;
    if v_hi.g[0] > tau || v_lo.g[0] <= v_hi.g[0] {
        // Infeasible within the search range: the least violating response.
        return Ok(OptimalMixture { members: vec![(hi, 1.0)], values: v_hi, lambda });
    }
    let alpha = (tau - v_hi.g[0]) / (v_lo.g[0] - v_hi.g[0]);
    let values = PolicyValues { c: alpha * v_lo.c + (1.0 - alpha) * v_hi.c, g: vec![tau] };
    Ok(OptimalMixture { members: vec![(lo, alpha), (hi, 1.0 - alpha)], values, lambda })
}
