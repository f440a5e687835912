//! Deterministic, stochastic and mixture policies over finite MDPs.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{bail, Result};
use crate::rng;

const ROW_TOLERANCE: f64 = 1e-12;

/// `x -> a`, total over all states (entries at terminal states are ignored).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DeterministicPolicy {
    actions: Vec<usize>,
    num_actions: usize,
}

impl DeterministicPolicy {
    pub fn new(actions: Vec<usize>, num_actions: usize) -> Result<Self> {
        if let Some(x) = actions.iter().position(|&a| a >= num_actions) {
            bail!(Argument, "state {x} maps to action {} but only {num_actions} exist", actions[x]);
        }
        Ok(Self { actions, num_actions })
    }

    /// Plays `action` everywhere.
    pub fn constant(num_states: usize, num_actions: usize, action: usize) -> Result<Self> {
        Self::new(vec![action; num_states], num_actions)
    }

    #[inline]
    pub fn action(&self, x: usize) -> usize {
        self.actions[x]
    }

    pub fn actions(&self) -> &[usize] {
        &self.actions
    }

    pub fn num_states(&self) -> usize {
        self.actions.len()
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn to_stochastic(&self) -> StochasticPolicy {
        let mut probs = vec![0.0; self.actions.len() * self.num_actions];
        for (x, &a) in self.actions.iter().enumerate() {
            probs[x * self.num_actions + a] = 1.0;
        }
        StochasticPolicy { num_states: self.actions.len(), num_actions: self.num_actions, probs }
    }
}

/// Table `pi(a | x)`; every row is a probability vector.
#[derive(Debug, Clone, PartialEq)]
pub struct StochasticPolicy {
    num_states: usize,
    num_actions: usize,
    probs: Vec<f64>,
}

impl StochasticPolicy {
    /// Builds from a row-major `num_states x num_actions` table.
    pub fn new(num_states: usize, num_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if num_actions == 0 || probs.len() != num_states * num_actions {
            bail!(Argument, "policy table must be {num_states} x {num_actions}");
        }
        for (x, row) in probs.chunks(num_actions).enumerate() {
            let total: f64 = row.iter().sum();
            if row.iter().any(|p| !(*p >= 0.0 && *p <= 1.0)) || (total - 1.0).abs() > ROW_TOLERANCE {
                bail!(Argument, "row {x} of the policy is not a probability vector");
            }
        }
        Ok(Self { num_states, num_actions, probs })
    }

    pub fn uniform(num_states: usize, num_actions: usize) -> Self {
        let p = 1.0 / num_actions as f64;
        Self { num_states, num_actions, probs: vec![p; num_states * num_actions] }
    }

    #[inline]
    pub fn prob(&self, x: usize, a: usize) -> f64 {
        self.probs[x * self.num_actions + a]
    }

    pub fn row(&self, x: usize) -> &[f64] {
        &self.probs[x * self.num_actions..(x + 1) * self.num_actions]
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    /// True when every action has positive probability in every state.
    pub fn has_full_support(&self) -> bool {
        self.probs.iter().all(|p| *p > 0.0)
    }

    pub fn sample<R: Rng + ?Sized>(&self, x: usize, rng: &mut R) -> usize {
        rng::categorical(rng, self.row(x))
    }
}

/// Uniform mixture over best-response policies, stored as distinct members
/// with multiplicities. Executing it samples one member per episode.
#[derive(Debug, Clone, PartialEq)]
pub struct MixturePolicy {
    members: Vec<DeterministicPolicy>,
    counts: Vec<u64>,
    c_hat: Vec<f64>,
    g_hat: Vec<Vec<f64>>,
}

impl MixturePolicy {
    pub fn empty() -> Self {
        Self { members: Vec::new(), counts: Vec::new(), c_hat: Vec::new(), g_hat: Vec::new() }
    }

    /// Builds a mixture from members, multiplicities and their estimates.
    pub fn from_parts(members: Vec<DeterministicPolicy>, counts: Vec<u64>, c_hat: Vec<f64>, g_hat: Vec<Vec<f64>>) -> Result<Self> {
        let n = members.len();
        if counts.len() != n || c_hat.len() != n || g_hat.len() != n {
            bail!(Argument, "mixture member lists are not aligned");
        }
        if n > 0 && counts.iter().all(|c| *c == 0) {
            bail!(Argument, "mixture weights are all zero");
        }
        Ok(Self { members, counts, c_hat, g_hat })
    }

    /// Adds one round's member; identical policies share an entry.
    pub fn push(&mut self, member: DeterministicPolicy, c_hat: f64, g_hat: Vec<f64>) {
        if let Some(i) = self.members.iter().position(|p| *p == member) {
            self.counts[i] += 1;
        } else {
            self.members.push(member);
            self.counts.push(1);
            self.c_hat.push(c_hat);
            self.g_hat.push(g_hat);
        }
    }

    pub(crate) fn push_entry(&mut self, member: DeterministicPolicy, count: u64, c_hat: f64, g_hat: Vec<f64>) {
        self.members.push(member);
        self.counts.push(count);
        self.c_hat.push(c_hat);
        self.g_hat.push(g_hat);
    }

    pub fn members(&self) -> &[DeterministicPolicy] {
        &self.members
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn member_c_hat(&self) -> &[f64] {
        &self.c_hat
    }

    pub fn member_g_hat(&self) -> &[Vec<f64>] {
        &self.g_hat
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Total number of rounds represented.
    pub fn total_count(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn weights(&self) -> Vec<f64> {
        let total = self.total_count() as f64;
        self.counts.iter().map(|c| *c as f64 / total).collect()
    }

    /// Weighted average of member primary-cost estimates.
    pub fn c_hat(&self) -> f64 {
        let total = self.total_count() as f64;
        self.counts.iter().zip(&self.c_hat).map(|(n, c)| *n as f64 * c).sum::<f64>() / total
    }

    /// Weighted average of member constraint estimates.
    pub fn g_hat(&self) -> Vec<f64> {
        let m = self.g_hat.first().map_or(0, Vec::len);
        let total = self.total_count() as f64;
        let mut out = vec![0.0; m];
        for (n, g) in self.counts.iter().zip(&self.g_hat) {
            for (o, v) in out.iter_mut().zip(g) {
                *o += *n as f64 * v;
            }
        }
        out.iter_mut().for_each(|o| *o /= total);
        out
    }

    /// Index of the member with the lowest estimated cost among those whose
    /// estimated constraints satisfy `g_hat <= tau`. Falls back to the member
    /// with the smallest worst-case violation when none is feasible.
    pub fn best_member(&self, tau: &[f64]) -> Option<usize> {
        let violation = |g: &[f64]| g.iter().zip(tau).fold(0.0f64, |m, (gi, ti)| m.max(gi - ti));
        let feasible =
            (0..self.len()).filter(|&i| violation(&self.g_hat[i]) <= 0.0).min_by(|&i, &j| self.c_hat[i].total_cmp(&self.c_hat[j]));
        feasible.or_else(|| (0..self.len()).min_by(|&i, &j| violation(&self.g_hat[i]).total_cmp(&violation(&self.g_hat[j]))))
    }

    /// Samples the member to execute for one episode.
    pub fn sample_member<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        rng::categorical(rng, &self.weights())
    }
}
