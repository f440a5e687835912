//! Logged transition batches with trajectory structure.
//!
//! Samples of one trajectory are stored contiguously in time order. The last
//! sample of a trajectory is `done = true` when the episode reached a terminal
//! state and `done = false` when it was cut off at the horizon, so
//! trajectory-based estimators can tell the two apart.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use rand::Rng;

use crate::error::{bail, Result};
use crate::mdp::{Cell, Layout, TabularMdp};
use crate::policy::{DeterministicPolicy, StochasticPolicy};
use crate::rng;

/// One logged transition `(x, a, x', c, g_1..g_m)` plus bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionSample {
    pub traj_id: u64,
    pub t: u64,
    pub x: usize,
    pub a: usize,
    pub x_next: usize,
    pub c: f64,
    pub g: Vec<f64>,
    pub done: bool,
    /// `pi_D(a | x)` of the logging policy.
    pub behavior_prob: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrajectorySpan {
    pub id: u64,
    pub start: usize,
    pub end: usize,
}

impl TrajectorySpan {
    pub fn range(&self) -> Range<usize> {
        self.start..self.end
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }
}

/// Immutable batch `D` with `m` constraint channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    num_constraints: usize,
    samples: Vec<TransitionSample>,
    trajectories: Vec<TrajectorySpan>,
}

impl Dataset {
    /// Validates `samples` and indexes their trajectories.
    pub fn new(num_constraints: usize, samples: Vec<TransitionSample>) -> Result<Self> {
        let mut trajectories: Vec<TrajectorySpan> = Vec::new();
        for (i, s) in samples.iter().enumerate() {
            if s.g.len() != num_constraints {
                bail!(Data, "sample {i} has {} constraint costs, expected {num_constraints}", s.g.len());
            }
            if !(s.behavior_prob > 0.0 && s.behavior_prob <= 1.0) {
                bail!(Data, "sample {i} has behavior probability {} outside (0, 1]", s.behavior_prob);
            }
            if s.g.iter().any(|g| !(g.is_finite() && *g >= 0.0)) || !s.c.is_finite() {
                bail!(Data, "sample {i} has a non-finite or negative constraint cost");
            }
            match trajectories.last_mut() {
                Some(span) if span.id == s.traj_id => {
                    let prev = &samples[i - 1];
                    if prev.done {
                        bail!(Data, "trajectory {} continues after a terminal sample (sample {i})", s.traj_id);
                    }
                    if s.t != prev.t + 1 {
                        bail!(Data, "trajectory {} skips from t={} to t={} (sample {i})", s.traj_id, prev.t, s.t);
                    }
                    if prev.x_next != s.x {
                        bail!(Data, "trajectory {} is not chained at t={} (sample {i})", s.traj_id, s.t);
                    }
                    span.end = i + 1;
                }
                _ => {
                    if trajectories.iter().any(|sp| sp.id == s.traj_id) {
                        bail!(Data, "trajectory {} is not stored contiguously (sample {i})", s.traj_id);
                    }
                    trajectories.push(TrajectorySpan { id: s.traj_id, start: i, end: i + 1 });
                }
            }
        }
        Ok(Self { num_constraints, samples, trajectories })
    }

    pub fn empty(num_constraints: usize) -> Self {
        Self { num_constraints, samples: Vec::new(), trajectories: Vec::new() }
    }

    pub fn num_constraints(&self) -> usize {
        self.num_constraints
    }

    pub fn samples(&self) -> &[TransitionSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn trajectories(&self) -> &[TrajectorySpan] {
        &self.trajectories
    }

    pub fn num_trajectories(&self) -> usize {
        self.trajectories.len()
    }

    pub fn trajectory(&self, index: usize) -> &[TransitionSample] {
        &self.samples[self.trajectories[index].range()]
    }

    pub fn max_trajectory_len(&self) -> usize {
        self.trajectories.iter().map(TrajectorySpan::len).max().unwrap_or(0)
    }

    /// One more than the largest state index seen as `x` or `x'`.
    pub fn observed_num_states(&self) -> usize {
        self.samples.iter().map(|s| s.x.max(s.x_next) + 1).max().unwrap_or(0)
    }

    /// One more than the largest logged action.
    pub fn observed_num_actions(&self) -> usize {
        self.samples.iter().map(|s| s.a + 1).max().unwrap_or(0)
    }

    /// Empirical distribution of first states over `num_states` states.
    pub fn empirical_initial_distribution(&self, num_states: usize) -> Vec<f64> {
        let mut dist = vec![0.0; num_states];
        let n = self.trajectories.len() as f64;
        for span in &self.trajectories {
            let x = self.samples[span.start].x;
            if x < num_states {
                dist[x] += 1.0 / n;
            }
        }
        dist
    }

    /// Largest `|g_i|` over all samples and channels.
    pub fn max_abs_constraint_cost(&self) -> f64 {
        self.samples.iter().flat_map(|s| s.g.iter()).fold(0.0, |m, g| m.max(g.abs()))
    }

    pub fn max_abs_cost(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, s| m.max(s.c.abs()))
    }
}

// ── Collection ──────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollectOptions {
    pub num_trajectories: usize,
    pub max_horizon: usize,
    /// Accept behavior policies with zero-probability actions.
    pub allow_partial_support: bool,
}

impl CollectOptions {
    pub fn new(num_trajectories: usize, max_horizon: usize) -> Self {
        Self { num_trajectories, max_horizon, allow_partial_support: false }
    }
}

/// Rolls out `behavior` from `chi` until a terminal state or `max_horizon`.
///
/// Trajectories whose first state is already terminal contribute no samples.
pub fn collect<R: Rng + ?Sized>(mdp: &TabularMdp, behavior: &StochasticPolicy, options: CollectOptions, rng: &mut R) -> Result<Dataset> {
    if behavior.num_states() != mdp.num_states() || behavior.num_actions() != mdp.num_actions() {
        bail!(Argument, "behavior policy shape does not match the MDP");
    }
    if options.max_horizon == 0 {
        bail!(Argument, "horizon must be at least 1");
    }
    if !options.allow_partial_support && !behavior.has_full_support() {
        bail!(Argument, "behavior policy has zero-probability actions; set allow_partial_support to accept");
    }
    let mut samples = Vec::new();
    for traj in 0..options.num_trajectories {
        let mut x = rng::categorical(rng, mdp.initial_distribution());
        if mdp.is_terminal(x) {
            continue;
        }
        for t in 0..options.max_horizon {
            let a = behavior.sample(x, rng);
            let next = rng::categorical_sparse(rng, mdp.successors(x, a));
            let done = mdp.is_terminal(next);
            samples.push(TransitionSample {
                traj_id: traj as u64,
                t: t as u64,
                x,
                a,
                x_next: next,
                c: mdp.cost_c(x, a),
                g: mdp.cost_g(x, a).to_vec(),
                done,
                behavior_prob: behavior.prob(x, a),
            });
            if done {
                break;
            }
            x = next;
        }
    }
    Dataset::new(mdp.num_constraints(), samples)
}

/// `samples_per_pair` one-step trajectories from every state-action pair,
/// terminal states included, logged as if by a uniform policy.
pub fn full_coverage<R: Rng + ?Sized>(mdp: &TabularMdp, samples_per_pair: usize, rng: &mut R) -> Result<Dataset> {
    let prob = 1.0 / mdp.num_actions() as f64;
    let mut samples = Vec::with_capacity(mdp.num_states() * mdp.num_actions() * samples_per_pair);
    for x in 0..mdp.num_states() {
        for a in 0..mdp.num_actions() {
            for _ in 0..samples_per_pair {
                let next = rng::categorical_sparse(rng, mdp.successors(x, a));
                samples.push(TransitionSample {
                    traj_id: samples.len() as u64,
                    t: 0,
                    x,
                    a,
                    x_next: next,
                    c: mdp.cost_c(x, a),
                    g: mdp.cost_g(x, a).to_vec(),
                    done: mdp.is_terminal(next),
                    behavior_prob: prob,
                });
            }
        }
    }
    Dataset::new(mdp.num_constraints(), samples)
}

// ── FrozenLake behavior policy ──────────────────────────────────────────

/// Shortest-path action per state: fewest steps to a goal (a terminal state
/// entered with negative primary cost) without taking any transition that
/// incurs constraint cost. Stochastic rows follow their most likely successor.
/// Ties go to the lowest action index; `None` where no goal is reachable.
pub fn shortest_path_actions(mdp: &TabularMdp) -> Vec<Option<usize>> {
    let (s, na) = (mdp.num_states(), mdp.num_actions());
    let likely =
        |x: usize, a: usize| mdp.successors(x, a).iter().fold((usize::MAX, 0.0), |best, &(y, p)| if p > best.1 { (y, p) } else { best }).0;
    let safe = |x: usize, a: usize| mdp.cost_g(x, a).iter().all(|g| *g == 0.0);
    let mut goal = vec![false; s];
    for x in 0..s {
        if mdp.is_terminal(x) {
            continue;
        }
        for a in 0..na {
            let y = likely(x, a);
            if mdp.is_terminal(y) && mdp.cost_c(x, a) < 0.0 && safe(x, a) {
                goal[y] = true;
            }
        }
    }
    let mut dist: Vec<Option<usize>> = (0..s).map(|x| goal[x].then_some(0)).collect();
    // Bellman-Ford style relaxation; every pass fixes at least one more layer.
    for _ in 0..s {
        let mut changed = false;
        for x in 0..s {
            if mdp.is_terminal(x) {
                continue;
            }
            for a in 0..na {
                if !safe(x, a) {
                    continue;
                }
                if let Some(d) = dist[likely(x, a)] {
                    if dist[x].is_none_or(|cur| d + 1 < cur) {
                        dist[x] = Some(d + 1);
                        changed = true;
                    }
                }
            }
        }
        if !changed {
            break;
        }
    }
    (0..s)
        .map(|x| {
            if mdp.is_terminal(x) {
                return None;
            }
            let target = dist[x]? - 1;
            (0..na).find(|&a| safe(x, a) && dist[likely(x, a)] == Some(target))
        })
        .collect()
}

/// `pi_D(a|x) = eps/|A| + (1 - eps) 1[a = shortest-path action]`; states with
/// no path to a goal (and terminal states) get the uniform row.
pub fn make_frozenlake_behavior(mdp: &TabularMdp, epsilon_random: f64) -> Result<StochasticPolicy> {
    if !(0.0..=1.0).contains(&epsilon_random) {
        bail!(Argument, "randomization weight must lie in [0, 1], got {epsilon_random}");
    }
    let na = mdp.num_actions();
    let base = epsilon_random / na as f64;
    let mut probs = Vec::with_capacity(mdp.num_states() * na);
    for best in shortest_path_actions(mdp) {
        match best {
            Some(b) => probs.extend((0..na).map(|a| if a == b { base + 1.0 - epsilon_random } else { base })),
            None => probs.extend(core::iter::repeat_n(1.0 / na as f64, na)),
        }
    }
    StochasticPolicy::new(mdp.num_states(), na, probs)
}

/// A deliberately unsafe evaluation target: the fewest moves into the nearest
/// hole, never passing through a goal. Ties go to the lowest action index;
/// terminal cells and cells with no route to a hole take action 0.
pub fn nearest_hole_policy(layout: &Layout) -> Result<DeterministicPolicy> {
    let n = layout.rows() * layout.cols();
    let terminal = |x: usize| matches!(layout.cell_at(x), Cell::Hole | Cell::Goal);
    let mut dist: Vec<Option<usize>> = (0..n).map(|x| (layout.cell_at(x) == Cell::Hole).then_some(0)).collect();
    for _ in 0..n {
        let mut changed = false;
        for x in (0..n).filter(|&x| !terminal(x)) {
            for a in 0..4 {
                if let Some(d) = dist[layout.neighbor(x, a)] {
                    if dist[x].is_none_or(|cur| d + 1 < cur) {
                        dist[x] = Some(d + 1);
                        changed = true;
                    }
                }
            }
        }
        if !changed {
            break;
        }
    }
    let actions = (0..n)
        .map(|x| match dist[x] {
            Some(d) if !terminal(x) => (0..4).find(|&a| dist[layout.neighbor(x, a)] == Some(d - 1)).unwrap_or(0),
            _ => 0,
        })
        .collect();
    DeterministicPolicy::new(actions, 4)
}

// ── Subsampling ─────────────────────────────────────────────────────────

/// Draws whole trajectories uniformly without replacement until the number of
/// selected transitions first reaches `fraction * len`. Selected trajectories
/// keep their original order.
pub fn subsample<R: Rng + ?Sized>(dataset: &Dataset, fraction: f64, rng: &mut R) -> Result<Dataset> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        bail!(Argument, "subsample fraction must lie in (0, 1], got {fraction}");
    }
    if dataset.is_empty() {
        bail!(Argument, "cannot subsample an empty dataset");
    }
    let target = fraction * dataset.len() as f64;
    let mut order: Vec<usize> = (0..dataset.num_trajectories()).collect();
    rng::shuffle(rng, &mut order);
    let mut chosen = Vec::new();
    let mut count = 0usize;
    for idx in order {
        if count as f64 >= target {
            break;
        }
        count += dataset.trajectories[idx].len();
        chosen.push(idx);
    }
    chosen.sort_unstable();
    let mut samples = Vec::with_capacity(count);
    for idx in chosen {
        samples.extend_from_slice(dataset.trajectory(idx));
    }
    Dataset::new(dataset.num_constraints, samples)
}
