//! Fitted Q evaluation, fitted Q iteration, LSTDQ and LSPI.
//!
//! Every solver regresses on the same multiset of `(x, a)` cells each
//! iteration, so the batch is aggregated once into an [`EmpiricalModel`]: per
//! cell the sample count, mean costs, and the empirical distribution of
//! non-terminal successors. A cell's mean bootstrap target is then
//! `mean cost + gamma * sum_x' p(x') V(x')`, which is exactly the mean of the
//! per-sample targets.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::approx::{greedy_in_row, Design, FeatureMap, QFunction};
use crate::dataset::Dataset;
use crate::error::{bail, Error, Result};
use crate::linalg::Lu;
use crate::mdp::CostSelector;
use crate::policy::DeterministicPolicy;

/// Default iteration count for FQE and FQI (`0.95^100 ~ 6e-3`).
pub const DEFAULT_ITERATIONS: usize = 100;
pub const DEFAULT_LSPI_EPS: f64 = 1e-6;
pub const DEFAULT_LSPI_MAX_ITERS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitParams {
    pub gamma: f64,
    pub iterations: usize,
    pub ridge: f64,
}

impl FitParams {
    pub fn new(gamma: f64, iterations: usize) -> Self {
        Self { gamma, iterations, ridge: crate::approx::DEFAULT_RIDGE }
    }

    fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            bail!(Argument, "discount must lie in (0, 1), got {}", self.gamma);
        }
        if self.iterations == 0 {
            bail!(Argument, "iteration count must be at least 1");
        }
        if !(self.ridge >= 0.0 && self.ridge.is_finite()) {
            bail!(Argument, "ridge must be finite and non-negative");
        }
        Ok(())
    }
}

/// Result of a fitted solve.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedRun {
    pub q_final: QFunction,
    /// Per iteration, the count-weighted RMS difference between the previous
    /// iterate and the cell-mean targets on the data.
    pub residuals: Vec<f64>,
    pub iterations: usize,
}

// ── Empirical model ─────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq)]
struct Cell {
    x: usize,
    a: usize,
    count: f64,
    mean_c: f64,
    mean_g: Vec<f64>,
    /// Non-terminal successors with their share of this cell's samples.
    successors: Vec<(usize, f64)>,
}

/// The batch aggregated by `(x, a)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalModel {
    num_states: usize,
    num_actions: usize,
    num_constraints: usize,
    cells: Vec<Cell>,
    initial: Vec<f64>,
}

impl EmpiricalModel {
    /// Aggregates `dataset` over a `num_states x num_actions` domain.
    pub fn new(dataset: &Dataset, num_states: usize, num_actions: usize) -> Result<Self> {
        if dataset.is_empty() {
            bail!(Argument, "dataset is empty");
        }
        if dataset.observed_num_states() > num_states || dataset.observed_num_actions() > num_actions {
            bail!(Argument, "dataset indices exceed the {num_states} x {num_actions} domain");
        }
        let m = dataset.num_constraints();
        let mut slot = vec![usize::MAX; num_states * num_actions];
        let mut cells: Vec<Cell> = Vec::new();
        for s in dataset.samples() {
            let k = s.x * num_actions + s.a;
            if slot[k] == usize::MAX {
                slot[k] = cells.len();
                cells.push(Cell { x: s.x, a: s.a, count: 0.0, mean_c: 0.0, mean_g: vec![0.0; m], successors: Vec::new() });
            }
            let cell = &mut cells[slot[k]];
            cell.count += 1.0;
            cell.mean_c += s.c;
            cell.mean_g.iter_mut().zip(&s.g).for_each(|(a, b)| *a += b);
            if !s.done {
                match cell.successors.iter_mut().find(|e| e.0 == s.x_next) {
                    Some(e) => e.1 += 1.0,
                    None => cell.successors.push((s.x_next, 1.0)),
                }
            }
        }
        for cell in &mut cells {
            let n = cell.count;
            cell.mean_c /= n;
            cell.mean_g.iter_mut().for_each(|g| *g /= n);
            cell.successors.sort_by_key(|e| e.0);
            cell.successors.iter_mut().for_each(|e| e.1 /= n);
        }
        Ok(Self { num_states, num_actions, num_constraints: m, cells, initial: dataset.empirical_initial_distribution(num_states) })
    }

    /// Replaces the empirical first-state distribution used for final averages.
    pub fn with_initial_distribution(mut self, initial: &[f64]) -> Result<Self> {
        if initial.len() != self.num_states {
            bail!(Argument, "initial distribution has {} entries, expected {}", initial.len(), self.num_states);
        }
        self.initial = initial.to_vec();
        Ok(self)
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn num_constraints(&self) -> usize {
        self.num_constraints
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn initial_distribution(&self) -> &[f64] {
        &self.initial
    }

    /// Least-squares design for `template` over this model's cells.
    pub fn design(&self, template: &QFunction, ridge: f64) -> Result<Design> {
        if template.num_states() != self.num_states || template.num_actions() != self.num_actions {
            bail!(Argument, "function class domain does not match the data domain");
        }
        Design::new(template, self.cells.iter().map(|c| (c.x, c.a)).collect(), self.cells.iter().map(|c| c.count).collect(), ridge)
    }

    fn mean_cost(&self, cell: &Cell, cost: &CostSelector) -> f64 {
        cost.apply(cell.mean_c, &cell.mean_g)
    }

    /// `sum_x chi(x) f(x)`.
    pub fn average_initial<F: Fn(usize) -> f64>(&self, f: F) -> f64 {
        self.initial.iter().enumerate().filter(|(_, p)| **p > 0.0).map(|(x, p)| p * f(x)).sum()
    }
}

// ── FQE / FQI ───────────────────────────────────────────────────────────

/// A prepared fitted solver: aggregated data plus a factored design.
#[derive(Debug, Clone)]
pub struct FittedSolver {
    model: EmpiricalModel,
    design: Design,
    template: QFunction,
    gamma: f64,
}

enum Bootstrap<'a> {
    Policy(&'a DeterministicPolicy),
    Greedy,
}

impl FittedSolver {
    pub fn new(model: EmpiricalModel, template: &QFunction, gamma: f64, ridge: f64) -> Result<Self> {
        FitParams { gamma, iterations: 1, ridge }.validate()?;
        let design = model.design(template, ridge)?;
        Ok(Self { model, design, template: template.clone(), gamma })
    }

    pub fn model(&self) -> &EmpiricalModel {
        &self.model
    }

    pub fn template(&self) -> &QFunction {
        &self.template
    }

    fn iterate(&self, cost: &CostSelector, iterations: usize, bootstrap: Bootstrap<'_>) -> Result<FittedRun> {
        cost.validate(self.model.num_constraints)?;
        if iterations == 0 {
            bail!(Argument, "iteration count must be at least 1");
        }
        let base: Vec<f64> = self.model.cells.iter().map(|c| self.model.mean_cost(c, cost)).collect();
        let total: f64 = self.model.cells.iter().map(|c| c.count).sum();
        let mut q = self.template.clone();
        let mut next_value = vec![0.0; self.model.num_states];
        let mut targets = vec![0.0; base.len()];
        let mut residuals = Vec::with_capacity(iterations);
        for _ in 0..iterations {
            for (x, v) in next_value.iter_mut().enumerate() {
                *v = match bootstrap {
                    Bootstrap::Policy(pi) => q.value(x, pi.action(x)),
                    Bootstrap::Greedy => q.min_value(x),
                };
            }
            let mut sq = 0.0;
            for ((t, cell), b) in targets.iter_mut().zip(&self.model.cells).zip(&base) {
                let boot: f64 = cell.successors.iter().map(|&(y, p)| p * next_value[y]).sum();
                *t = b + self.gamma * boot;
                let d = q.value(cell.x, cell.a) - *t;
                sq += cell.count * d * d;
            }
            residuals.push(libm::sqrt(sq / total));
            q = self.design.fit(&targets);
        }
        Ok(FittedRun { q_final: q, residuals, iterations })
    }

    /// FQE: returns `sum_x chi(x) Q_K(x, pi(x))` and the run.
    pub fn fqe(&self, policy: &DeterministicPolicy, cost: &CostSelector, iterations: usize) -> Result<(f64, FittedRun)> {
        if policy.num_states() != self.model.num_states || policy.num_actions() != self.model.num_actions {
            bail!(Argument, "policy shape does not match the data domain");
        }
        let run = self.iterate(cost, iterations, Bootstrap::Policy(policy))?;
        let estimate = self.model.average_initial(|x| run.q_final.value(x, policy.action(x)));
        Ok((estimate, run))
    }

    /// FQI: returns the greedy policy of `Q_K` and the run.
    pub fn fqi(&self, cost: &CostSelector, iterations: usize) -> Result<(DeterministicPolicy, FittedRun)> {
        let run = self.iterate(cost, iterations, Bootstrap::Greedy)?;
        Ok((run.q_final.greedy_policy(), run))
    }
}

fn solver_for(dataset: &Dataset, template: &QFunction, params: &FitParams, initial: Option<&[f64]>) -> Result<FittedSolver> {
    params.validate()?;
    let mut model = EmpiricalModel::new(dataset, template.num_states(), template.num_actions())?;
    if let Some(chi) = initial {
        model = model.with_initial_distribution(chi)?;
    }
    FittedSolver::new(model, template, params.gamma, params.ridge)
}

/// Fitted Q evaluation of `policy` on `cost`, starting from `template`.
///
/// `initial` is the distribution used for the final average; `None` uses
/// the empirical distribution of first states in the batch.
pub fn fqe(
    dataset: &Dataset,
    policy: &DeterministicPolicy,
    cost: &CostSelector,
    template: &QFunction,
    params: &FitParams,
    initial: Option<&[f64]>,
) -> Result<(f64, FittedRun)> {
    solver_for(dataset, template, params, initial)?.fqe(policy, cost, params.iterations)
}

/// Fitted Q iteration on `cost`, starting from `template`.
pub fn fqi(dataset: &Dataset, cost: &CostSelector, template: &QFunction, params: &FitParams) -> Result<(DeterministicPolicy, FittedRun)> {
    solver_for(dataset, template, params, None)?.fqi(cost, params.iterations)
}

// ── LSTDQ / LSPI ────────────────────────────────────────────────────────

/// LSTDQ over a prepared batch with fixed features.
#[derive(Debug, Clone)]
pub struct LstdqSolver {
    model: EmpiricalModel,
    features: Arc<FeatureMap>,
    gamma: f64,
    ridge: f64,
}

impl LstdqSolver {
    pub fn new(model: EmpiricalModel, features: Arc<FeatureMap>, gamma: f64, ridge: f64) -> Result<Self> {
        FitParams { gamma, iterations: 1, ridge }.validate()?;
        if features.num_states() != model.num_states || features.num_actions() != model.num_actions {
            bail!(Argument, "feature map domain does not match the data domain");
        }
        Ok(Self { model, features, gamma, ridge })
    }

    pub fn model(&self) -> &EmpiricalModel {
        &self.model
    }

    pub fn features(&self) -> &Arc<FeatureMap> {
        &self.features
    }

    /// Solves `(A + ridge I) w = b` with
    /// `A = sum phi(x,a) (phi(x,a) - gamma phi(x', pi(x')))^T` and
    /// `b = sum phi(x,a) cost`; terminal samples have no successor term.
    pub fn evaluate(&self, policy: &DeterministicPolicy, cost: &CostSelector) -> Result<Vec<f64>> {
        cost.validate(self.model.num_constraints)?;
        let k = self.features.dim();
        let mut a_mat = vec![0.0; k * k];
        let mut b = vec![0.0; k];
        let mut diff = vec![0.0; k];
        for cell in &self.model.cells {
            let phi = self.features.phi(cell.x, cell.a);
            diff.copy_from_slice(phi);
            for &(y, p) in &cell.successors {
                for (d, q) in diff.iter_mut().zip(self.features.phi(y, policy.action(y))) {
                    *d -= self.gamma * p * q;
                }
            }
            let c = self.model.mean_cost(cell, cost);
            for (i, &pi) in phi.iter().enumerate() {
                if pi == 0.0 {
                    continue;
                }
                b[i] += cell.count * pi * c;
                let row = &mut a_mat[i * k..(i + 1) * k];
                for (r, d) in row.iter_mut().zip(&diff) {
                    *r += cell.count * pi * d;
                }
            }
        }
        for i in 0..k {
            a_mat[i * k + i] += self.ridge;
        }
        let lu = Lu::factor(k, a_mat).map_err(|_| {
            Error::Numerical(if self.ridge == 0.0 {
                "LSTDQ system is singular; use a positive ridge".into()
            } else {
                alloc::format!("LSTDQ system is singular even with ridge {}", self.ridge)
            })
        })?;
        lu.solve_in_place(&mut b);
        Ok(b)
    }

    pub fn greedy(&self, w: &[f64]) -> DeterministicPolicy {
        let na = self.features.num_actions();
        let actions = (0..self.features.num_states()).map(|x| greedy_in_row((0..na).map(|a| self.features.dot(x, a, w)))).collect();
        DeterministicPolicy::new(actions, na).expect("greedy actions are in range")
    }

    /// One LSTDQ step from weights `w` (successor actions greedy in `w`).
    pub fn step(&self, w: &[f64], cost: &CostSelector) -> Result<Vec<f64>> {
        if w.len() != self.features.dim() {
            bail!(Argument, "weights have length {}, features have dimension {}", w.len(), self.features.dim());
        }
        self.evaluate(&self.greedy(w), cost)
    }

    /// `sum_x chi(x) w^T phi(x, pi(x))`.
    pub fn value(&self, w: &[f64], policy: &DeterministicPolicy) -> f64 {
        self.model.average_initial(|x| self.features.dot(x, policy.action(x), w))
    }

    pub fn lspi(&self, cost: &CostSelector, eps_stop: f64, max_iters: usize) -> Result<LspiRun> {
        if !(eps_stop > 0.0) {
            bail!(Argument, "stopping threshold must be positive");
        }
        if max_iters == 0 {
            bail!(Argument, "LSPI needs at least one iteration");
        }
        let mut w = vec![0.0; self.features.dim()];
        let mut changes = Vec::new();
        for _ in 0..max_iters {
            let next = self.step(&w, cost)?;
            let change = libm::sqrt(next.iter().zip(&w).map(|(a, b)| (a - b) * (a - b)).sum());
            changes.push(change);
            w = next;
            if change <= eps_stop {
                return Ok(LspiRun { weights: w, iterations: changes.len(), converged: true, changes });
            }
        }
        Ok(LspiRun { weights: w, iterations: changes.len(), converged: false, changes })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LspiRun {
    /// Final weights (the last iterate when not converged).
    pub weights: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// ℓ2 change of the weights per iteration.
    pub changes: Vec<f64>,
}

fn lstdq_solver(dataset: &Dataset, features: &FeatureMap, gamma: f64, ridge: f64) -> Result<LstdqSolver> {
    let model = EmpiricalModel::new(dataset, features.num_states(), features.num_actions())?;
    LstdqSolver::new(model, Arc::new(features.clone()), gamma, ridge)
}

/// One LSTDQ solve for the policy greedy in `w`.
pub fn lstdq(dataset: &Dataset, w: &[f64], cost: &CostSelector, features: &FeatureMap, gamma: f64, ridge: f64) -> Result<Vec<f64>> {
    lstdq_solver(dataset, features, gamma, ridge)?.step(w, cost)
}

/// LSPI from `w_0 = 0` until the ℓ2 change is at most `eps_stop`.
pub fn lspi(
    dataset: &Dataset,
    cost: &CostSelector,
    features: &FeatureMap,
    gamma: f64,
    eps_stop: f64,
    max_iters: usize,
    ridge: f64,
) -> Result<LspiRun> {
    lstdq_solver(dataset, features, gamma, ridge)?.lspi(cost, eps_stop, max_iters)
}
