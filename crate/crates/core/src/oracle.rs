//! Best-response players for the Lagrangian game.
//!
//! Each oracle answers "which policy minimizes `C + lambda^T G`?" and reports
//! its value estimates. Policies are registered once; a policy proposed again
//! reuses its cached estimates, so each distinct member is evaluated exactly
//! once per run.

use alloc::collections::BTreeMap;
use alloc::sync::Arc;
use alloc::vec::Vec;

use crate::approx::{FeatureMap, QFunction};
use crate::error::{bail, Result};
use crate::exact::{policy_iteration, value_iteration, DeterministicEvaluation, DEFAULT_VI_TOL, IMPROVEMENT_TOL};
use crate::fitted::{FittedSolver, LstdqSolver};
use crate::mdp::{CostSelector, TabularMdp};
use crate::policy::DeterministicPolicy;

/// A registered best response with its estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct Member {
    pub policy: DeterministicPolicy,
    pub c_hat: f64,
    pub g_hat: Vec<f64>,
    /// LSPI weight vector the policy is greedy in, when there is one.
    pub weights: Option<Vec<f64>>,
}

pub trait GameOracle {
    fn num_constraints(&self) -> usize;

    /// Best response to multipliers `lambda` (length `m`); returns the id of
    /// the registered member.
    fn best_response(&mut self, lambda: &[f64]) -> Result<usize>;

    fn member(&self, id: usize) -> &Member;

    fn num_members(&self) -> usize;
}

#[derive(Debug, Clone, Default)]
struct Registry {
    members: Vec<Member>,
    index: BTreeMap<DeterministicPolicy, usize>,
}

impl Registry {
    fn find(&self, policy: &DeterministicPolicy) -> Option<usize> {
        self.index.get(policy).copied()
    }

    fn insert(&mut self, member: Member) -> usize {
        let id = self.members.len();
        self.index.insert(member.policy.clone(), id);
        self.members.push(member);
        id
    }
}

fn check_lambda(lambda: &[f64], m: usize) -> Result<()> {
    CostSelector::Scalarized(lambda.to_vec()).validate(m)
}

// ── Fitted Q iteration + fitted Q evaluation ────────────────────────────

/// Best response by FQI on `c + lambda^T g`, certified by FQE per channel.
#[derive(Debug, Clone)]
pub struct FittedOracle {
    solver: FittedSolver,
    k_fqi: usize,
    k_fqe: usize,
    registry: Registry,
}

impl FittedOracle {
    pub fn new(solver: FittedSolver, k_fqi: usize, k_fqe: usize) -> Result<Self> {
        if k_fqi == 0 || k_fqe == 0 {
            bail!(Argument, "iteration counts must be at least 1");
        }
        Ok(Self { solver, k_fqi, k_fqe, registry: Registry::default() })
    }

    pub fn solver(&self) -> &FittedSolver {
        &self.solver
    }

    /// FQE estimates `(C, G)` of an arbitrary policy.
    pub fn evaluate(&self, policy: &DeterministicPolicy) -> Result<(f64, Vec<f64>)> {
        let m = self.solver.model().num_constraints();
        let c = self.solver.fqe(policy, &CostSelector::Primary, self.k_fqe)?.0;
        let mut g = Vec::with_capacity(m);
        for i in 0..m {
            g.push(self.solver.fqe(policy, &CostSelector::Constraint(i), self.k_fqe)?.0);
        }
        Ok((c, g))
    }
}

impl GameOracle for FittedOracle {
    fn num_constraints(&self) -> usize {
        self.solver.model().num_constraints()
    }

    fn best_response(&mut self, lambda: &[f64]) -> Result<usize> {
        check_lambda(lambda, self.num_constraints())?;
        let (policy, _) = self.solver.fqi(&CostSelector::Scalarized(lambda.to_vec()), self.k_fqi)?;
        if let Some(id) = self.registry.find(&policy) {
            return Ok(id);
        }
        let (c_hat, g_hat) = self.evaluate(&policy)?;
        Ok(self.registry.insert(Member { policy, c_hat, g_hat, weights: None }))
    }

    fn member(&self, id: usize) -> &Member {
        &self.registry.members[id]
    }

    fn num_members(&self) -> usize {
        self.registry.members.len()
    }
}

// ── LSPI + LSTDQ ────────────────────────────────────────────────────────

/// Best response by LSPI on `c + lambda^T g`, evaluated by LSTDQ per channel.
#[derive(Debug, Clone)]
pub struct LspiOracle {
    solver: LstdqSolver,
    eps_stop: f64,
    max_iters: usize,
    registry: Registry,
    unconverged: usize,
}

impl LspiOracle {
    pub fn new(solver: LstdqSolver, eps_stop: f64, max_iters: usize) -> Self {
        Self { solver, eps_stop, max_iters, registry: Registry::default(), unconverged: 0 }
    }

    /// Number of LSPI solves that hit the iteration cap.
    pub fn unconverged_solves(&self) -> usize {
        self.unconverged
    }

    pub fn features(&self) -> &Arc<FeatureMap> {
        self.solver.features()
    }

    pub fn evaluate(&self, policy: &DeterministicPolicy) -> Result<(f64, Vec<f64>)> {
        let m = self.solver.model().num_constraints();
        let w = self.solver.evaluate(policy, &CostSelector::Primary)?;
        let c = self.solver.value(&w, policy);
        let mut g = Vec::with_capacity(m);
        for i in 0..m {
            let w = self.solver.evaluate(policy, &CostSelector::Constraint(i))?;
            g.push(self.solver.value(&w, policy));
        }
        Ok((c, g))
    }
}

impl GameOracle for LspiOracle {
    fn num_constraints(&self) -> usize {
        self.solver.model().num_constraints()
    }

    fn best_response(&mut self, lambda: &[f64]) -> Result<usize> {
        check_lambda(lambda, self.num_constraints())?;
        let run = self.solver.lspi(&CostSelector::Scalarized(lambda.to_vec()), self.eps_stop, self.max_iters)?;
        if !run.converged {
            self.unconverged += 1;
        }
        let policy = self.solver.greedy(&run.weights);
        if let Some(id) = self.registry.find(&policy) {
            return Ok(id);
        }
        let (c_hat, g_hat) = self.evaluate(&policy)?;
        Ok(self.registry.insert(Member { policy, c_hat, g_hat, weights: Some(run.weights) }))
    }

    fn member(&self, id: usize) -> &Member {
        &self.registry.members[id]
    }

    fn num_members(&self) -> usize {
        self.registry.members.len()
    }
}

// ── Exact ───────────────────────────────────────────────────────────────

#[derive(Debug, Clone)]
struct ExactEntry {
    eval: DeterministicEvaluation,
    /// With one constraint: the multipliers for which this policy admits no
    /// improving action, `[lo, hi]`.
    interval: Option<(f64, f64)>,
}

/// Exact best responses and exact values on a known MDP.
///
/// Every registered policy keeps its per-channel advantages, so checking
/// whether it is still a best response to new multipliers needs no solve:
/// `pi` is optimal for `c + lambda^T g` iff no scalarized advantage is below
/// `-IMPROVEMENT_TOL`. With a single constraint this is an interval test on
/// `lambda`. Only on a miss does the oracle run policy iteration, warm-started
/// from the latest answer.
#[derive(Debug, Clone)]
pub struct ExactOracle {
    mdp: TabularMdp,
    registry: Registry,
    entries: Vec<ExactEntry>,
    recent: [usize; 2],
    solves: u64,
}

impl ExactOracle {
    pub fn new(mdp: TabularMdp) -> Self {
        Self { mdp, registry: Registry::default(), entries: Vec::new(), recent: [usize::MAX; 2], solves: 0 }
    }

    pub fn mdp(&self) -> &TabularMdp {
        &self.mdp
    }

    /// Policy-iteration solves performed (cache misses).
    pub fn solves(&self) -> u64 {
        self.solves
    }

    fn interval(eval: &DeterministicEvaluation) -> Option<(f64, f64)> {
        if eval.advantages.len() != 2 {
            return None;
        }
        let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
        for (&ac, &ag) in eval.advantages[0].iter().zip(&eval.advantages[1]) {
            let bound = (-IMPROVEMENT_TOL - ac) / ag;
            if ag > 0.0 {
                lo = lo.max(bound);
            } else if ag < 0.0 {
                hi = hi.min(bound);
            } else if ac < -IMPROVEMENT_TOL {
                return Some((f64::INFINITY, f64::NEG_INFINITY));
            }
        }
        Some((lo, hi))
    }

    #[inline]
    fn is_best_response(&self, id: usize, lambda: &[f64]) -> bool {
        let entry = &self.entries[id];
        match entry.interval {
            Some((lo, hi)) => lo <= lambda[0] && lambda[0] <= hi,
            None => (0..entry.eval.advantages[0].len()).all(|k| entry.eval.scalarized_advantage(k, lambda) >= -IMPROVEMENT_TOL),
        }
    }

    fn remember(&mut self, id: usize) -> usize {
        if self.recent[0] != id {
            self.recent = [id, self.recent[0]];
        }
        id
    }
}

impl GameOracle for ExactOracle {
    fn num_constraints(&self) -> usize {
        self.mdp.num_constraints()
    }

    fn best_response(&mut self, lambda: &[f64]) -> Result<usize> {
        if lambda.len() != self.mdp.num_constraints() {
            check_lambda(lambda, self.mdp.num_constraints())?;
        }
        for id in self.recent {
            if id != usize::MAX && self.is_best_response(id, lambda) {
                return Ok(self.remember(id));
            }
        }
        check_lambda(lambda, self.mdp.num_constraints())?;
        if let Some(id) = (0..self.entries.len()).find(|&id| self.is_best_response(id, lambda)) {
            return Ok(self.remember(id));
        }
        self.solves += 1;
        let start = match self.recent[0] {
            usize::MAX => value_iteration(&self.mdp, &CostSelector::Scalarized(lambda.to_vec()), DEFAULT_VI_TOL)?.greedy_policy(),
            id => self.registry.members[id].policy.clone(),
        };
        let (policy, eval) = policy_iteration(&self.mdp, lambda, start)?;
        let id = match self.registry.find(&policy) {
            Some(id) => id,
            None => {
                let values = eval.values();
                let interval = Self::interval(&eval);
                self.entries.push(ExactEntry { eval, interval });
                self.registry.insert(Member { policy, c_hat: values.c, g_hat: values.g, weights: None })
            }
        };
        Ok(self.remember(id))
    }

    fn member(&self, id: usize) -> &Member {
        &self.registry.members[id]
    }

    fn num_members(&self) -> usize {
        self.registry.members.len()
    }
}

/// Zero-initialized member of the requested function class.
pub fn template_for(num_states: usize, num_actions: usize, linear: Option<Arc<FeatureMap>>) -> QFunction {
    match linear {
        Some(f) => QFunction::linear_zeros(f),
        None => QFunction::tabular_zeros(num_states, num_actions),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dual::{DualFlavor, DualVector};
    use crate::exact::{exact_best_response, exact_policy_values};
    use crate::mdp::{build_frozenlake, build_random_mdp, Layout};
    use alloc::vec;

    #[test]
    fn exact_oracle_agrees_with_direct_solves() {
        let mdp = build_random_mdp(6, 3, 1, 21).unwrap();
        let mut oracle = ExactOracle::new(mdp.clone());
        for &l in &[0.0, 0.3, 1.0, 2.5, 7.0, 0.3, 40.0, 1.0] {
            let id = oracle.best_response(&[l]).unwrap();
            let lambda = DualVector::new(vec![l, 50.0 - l], 50.0, DualFlavor::EgSimplex).unwrap();
            let direct = exact_best_response(&mdp, &lambda).unwrap();
            let dv = exact_policy_values(&mdp, &direct).unwrap();
            let member = oracle.member(id);
            let lag = |c: f64, g: &[f64]| c + l * g[0];
            assert!((lag(member.c_hat, &member.g_hat) - lag(dv.c, &dv.g)).abs() < 1e-8, "lambda = {l}");
        }
        assert!(oracle.solves() < 8);
    }

    #[test]
    fn exact_oracle_handles_two_constraints() {
        let mdp = build_random_mdp(5, 2, 2, 4).unwrap();
        let mut oracle = ExactOracle::new(mdp.clone());
        let id = oracle.best_response(&[0.5, 1.5]).unwrap();
        let again = oracle.best_response(&[0.5, 1.5]).unwrap();
        assert_eq!(id, again);
        assert_eq!(oracle.solves(), 1);
        assert!(oracle.best_response(&[0.5]).is_err());
    }

    #[test]
    fn huge_multiplier_avoids_holes() {
        let mdp = build_frozenlake(&Layout::standard_8x8()).unwrap();
        let mut oracle = ExactOracle::new(mdp.clone());
        let id = oracle.best_response(&[1e6]).unwrap();
        assert_eq!(exact_policy_values(&mdp, &oracle.member(id).policy).unwrap().g[0], 0.0);
    }
}
