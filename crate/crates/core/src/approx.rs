//! The function class: tabular and linear-in-features Q-functions and the
//! least-squares fit shared by the fitted solvers.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{bail, Error, Result};
use crate::linalg::Lu;
use crate::mdp::TabularMdp;
use crate::policy::DeterministicPolicy;

/// Default ridge for linear fits.
pub const DEFAULT_RIDGE: f64 = 1e-8;

/// Relative tolerance below which two Q-values count as tied. Fitted values
/// that agree mathematically can differ in the last few bits depending on
/// summation order; treating them as ties keeps `argmin` stable.
pub const TIE_TOLERANCE: f64 = 1e-10;

/// `phi(x, a)` stored as a dense `(S * A) x k` table.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    num_states: usize,
    num_actions: usize,
    dim: usize,
    table: Vec<f64>,
}

impl FeatureMap {
    /// Row `x * num_actions + a` of `table` holds `phi(x, a)`.
    pub fn new(num_states: usize, num_actions: usize, dim: usize, table: Vec<f64>) -> Result<Self> {
        if dim == 0 || table.len() != num_states * num_actions * dim {
            bail!(Argument, "feature table must be ({num_states} x {num_actions}) x {dim}");
        }
        if table.iter().any(|v| !v.is_finite()) {
            bail!(Argument, "feature table has non-finite entries");
        }
        Ok(Self { num_states, num_actions, dim, table })
    }

    /// Indicator features, `k = S * A`.
    pub fn one_hot(num_states: usize, num_actions: usize) -> Self {
        let k = num_states * num_actions;
        let mut table = vec![0.0; k * k];
        for i in 0..k {
            table[i * k + i] = 1.0;
        }
        Self { num_states, num_actions, dim: k, table }
    }

    #[inline]
    pub fn phi(&self, x: usize, a: usize) -> &[f64] {
        let row = x * self.num_actions + a;
        &self.table[row * self.dim..(row + 1) * self.dim]
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn dot(&self, x: usize, a: usize, w: &[f64]) -> f64 {
        self.phi(x, a).iter().zip(w).map(|(p, w)| p * w).sum()
    }
}

pub fn one_hot_features(mdp: &TabularMdp) -> FeatureMap {
    FeatureMap::one_hot(mdp.num_states(), mdp.num_actions())
}

#[derive(Debug, Clone, PartialEq)]
pub enum QKind {
    /// Row-major `values[x * A + a]`.
    Tabular(Vec<f64>),
    Linear {
        weights: Vec<f64>,
        features: Arc<FeatureMap>,
    },
}

/// A member of the function class `F`.
///
/// When `value_bound` is set, every evaluation is clipped to
/// `[-value_bound, value_bound]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QFunction {
    num_states: usize,
    num_actions: usize,
    kind: QKind,
    value_bound: Option<f64>,
}

impl QFunction {
    pub fn tabular_zeros(num_states: usize, num_actions: usize) -> Self {
        Self::tabular(num_states, num_actions, vec![0.0; num_states * num_actions]).expect("sizes agree by construction")
    }

    pub fn tabular(num_states: usize, num_actions: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != num_states * num_actions || num_actions == 0 {
            bail!(Argument, "tabular Q needs {num_states} x {num_actions} values");
        }
        Ok(Self { num_states, num_actions, kind: QKind::Tabular(values), value_bound: None })
    }

    pub fn linear(features: Arc<FeatureMap>, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != features.dim() {
            bail!(Argument, "weight vector has length {}, features have dimension {}", weights.len(), features.dim());
        }
        Ok(Self {
            num_states: features.num_states(),
            num_actions: features.num_actions(),
            kind: QKind::Linear { weights, features },
            value_bound: None,
        })
    }

    pub fn linear_zeros(features: Arc<FeatureMap>) -> Self {
        let k = features.dim();
        Self::linear(features, vec![0.0; k]).expect("sizes agree by construction")
    }

    /// Enables clipping of every evaluation to `[-bound, bound]`.
    pub fn with_value_bound(mut self, bound: Option<f64>) -> Self {
        self.value_bound = bound;
        self
    }

    /// Same shape and clipping, with parameters drawn uniformly from
    /// `[-scale, scale]`.
    pub fn randomized<R: Rng + ?Sized>(&self, scale: f64, rng: &mut R) -> Self {
        let mut out = self.clone();
        let params = match &mut out.kind {
            QKind::Tabular(v) => v,
            QKind::Linear { weights, .. } => weights,
        };
        for p in params.iter_mut() {
            *p = scale * (2.0 * crate::rng::unit(rng) - 1.0);
        }
        out
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn kind(&self) -> &QKind {
        &self.kind
    }

    pub fn value_bound(&self) -> Option<f64> {
        self.value_bound
    }

    /// Tabular values or linear weights.
    pub fn parameters(&self) -> &[f64] {
        match &self.kind {
            QKind::Tabular(v) => v,
            QKind::Linear { weights, .. } => weights,
        }
    }

    #[inline]
    pub fn value(&self, x: usize, a: usize) -> f64 {
        let raw = match &self.kind {
            QKind::Tabular(v) => v[x * self.num_actions + a],
            QKind::Linear { weights, features } => features.dot(x, a, weights),
        };
        match self.value_bound {
            Some(b) => raw.clamp(-b, b),
            None => raw,
        }
    }

    /// Lowest-index action whose value is within the tie tolerance of the
    /// row minimum.
    pub fn greedy_action(&self, x: usize) -> usize {
        greedy_in_row((0..self.num_actions).map(|a| self.value(x, a)))
    }

    pub fn min_value(&self, x: usize) -> f64 {
        (0..self.num_actions).map(|a| self.value(x, a)).fold(f64::INFINITY, f64::min)
    }

    /// All values as a row-major `S x A` table.
    pub fn to_table(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_states * self.num_actions);
        for x in 0..self.num_states {
            for a in 0..self.num_actions {
                out.push(self.value(x, a));
            }
        }
        out
    }

    pub fn greedy_policy(&self) -> DeterministicPolicy {
        let actions = (0..self.num_states).map(|x| self.greedy_action(x)).collect();
        DeterministicPolicy::new(actions, self.num_actions).expect("greedy actions are in range")
    }
}

/// `argmin` with [`TIE_TOLERANCE`] and lowest-index tie-breaking.
pub fn greedy_in_row<I: IntoIterator<Item = f64>>(row: I) -> usize {
    let row: Vec<f64> = row.into_iter().collect();
    let min = row.iter().copied().fold(f64::INFINITY, f64::min);
    let tol = TIE_TOLERANCE * (1.0 + libm::fabs(min));
    row.iter().position(|&v| v <= min + tol).unwrap_or(0)
}

pub fn q_value(q: &QFunction, x: usize, a: usize) -> f64 {
    q.value(x, a)
}

pub fn greedy_policy(q: &QFunction) -> DeterministicPolicy {
    q.greedy_policy()
}

// ── Least squares ───────────────────────────────────────────────────────

/// A least-squares problem whose design (the multiset of regressed cells) is
/// fixed while the targets change, as in every fitted iteration.
///
/// Samples sharing a cell are aggregated: squared loss over samples equals
/// squared loss over cell means weighted by counts, up to a constant, so
/// fitting the weighted means gives the same minimizer.
#[derive(Debug, Clone)]
pub struct Design {
    template: QFunction,
    cells: Vec<(usize, usize)>,
    counts: Vec<f64>,
    normal: Option<Lu>,
}

impl Design {
    /// `cells` are distinct `(x, a)` pairs with their sample counts.
    pub fn new(template: &QFunction, cells: Vec<(usize, usize)>, counts: Vec<f64>, ridge: f64) -> Result<Self> {
        if !(ridge >= 0.0 && ridge.is_finite()) {
            bail!(Argument, "ridge must be finite and non-negative, got {ridge}");
        }
        if cells.is_empty() || cells.len() != counts.len() {
            bail!(Argument, "least squares needs at least one input");
        }
        if let Some(&(x, a)) = cells.iter().find(|(x, a)| *x >= template.num_states || *a >= template.num_actions) {
            bail!(Argument, "input ({x}, {a}) is outside the function's domain");
        }
        let normal = match &template.kind {
            QKind::Tabular(_) => None,
            QKind::Linear { features, .. } => {
                let k = features.dim();
                let mut gram = vec![0.0; k * k];
                for (&(x, a), &n) in cells.iter().zip(&counts) {
                    let phi = features.phi(x, a);
                    for (i, pi) in phi.iter().enumerate().filter(|(_, p)| **p != 0.0) {
                        let row = &mut gram[i * k..(i + 1) * k];
                        for (g, pj) in row.iter_mut().zip(phi) {
                            *g += n * pi * pj;
                        }
                    }
                }
                for i in 0..k {
                    gram[i * k + i] += ridge;
                }
                Some(Lu::factor(k, gram).map_err(|_| {
                    if ridge == 0.0 {
                        Error::Numerical("normal equations are singular; use a positive ridge".into())
                    } else {
                        Error::Numerical(alloc::format!("normal equations are singular even with ridge {ridge}"))
                    }
                })?)
            }
        };
        Ok(Self { template: template.clone(), cells, counts, normal })
    }

    /// Aggregates raw `(x, a)` inputs.
    pub fn from_inputs(template: &QFunction, inputs: &[(usize, usize)], ridge: f64) -> Result<(Self, Vec<usize>)> {
        let na = template.num_actions;
        let mut slot = vec![usize::MAX; template.num_states * na];
        let mut cells = Vec::new();
        let mut counts = Vec::new();
        let mut index = Vec::with_capacity(inputs.len());
        for &(x, a) in inputs {
            if x >= template.num_states || a >= na {
                bail!(Argument, "input ({x}, {a}) is outside the function's domain");
            }
            let k = x * na + a;
            if slot[k] == usize::MAX {
                slot[k] = cells.len();
                cells.push((x, a));
                counts.push(0.0);
            }
            counts[slot[k]] += 1.0;
            index.push(slot[k]);
        }
        Ok((Self::new(template, cells, counts, ridge)?, index))
    }

    pub fn cells(&self) -> &[(usize, usize)] {
        &self.cells
    }

    pub fn counts(&self) -> &[f64] {
        &self.counts
    }

    /// Fits to per-cell target means aligned with [`Design::cells`].
    pub fn fit(&self, cell_means: &[f64]) -> QFunction {
        debug_assert_eq!(cell_means.len(), self.cells.len());
        let mut out = self.template.clone();
        match &mut out.kind {
            QKind::Tabular(values) => {
                for (&(x, a), &y) in self.cells.iter().zip(cell_means) {
                    values[x * self.template.num_actions + a] = y;
                }
            }
            QKind::Linear { weights, features } => {
                let mut rhs = vec![0.0; features.dim()];
                for ((&(x, a), &n), &y) in self.cells.iter().zip(&self.counts).zip(cell_means) {
                    for (r, p) in rhs.iter_mut().zip(features.phi(x, a)) {
                        *r += n * p * y;
                    }
                }
                self.normal.as_ref().expect("linear designs are factored").solve_in_place(&mut rhs);
                *weights = rhs;
            }
        }
        out
    }
}

/// `argmin_{f in F} (1/n) sum (f(x_i, a_i) - y_i)^2`, starting from `template`.
///
/// Tabular: each visited cell becomes the mean of its targets; unvisited cells
/// keep the template's value. Linear: solves `(Phi^T Phi + ridge I) w = Phi^T y`.
pub fn fit_least_squares(inputs: &[(usize, usize)], targets: &[f64], template: &QFunction, ridge: f64) -> Result<QFunction> {
    if inputs.len() != targets.len() {
        bail!(Argument, "{} inputs but {} targets", inputs.len(), targets.len());
    }
    if targets.iter().any(|y| !y.is_finite()) {
        bail!(Argument, "targets must be finite");
    }
    let (design, index) = Design::from_inputs(template, inputs, ridge)?;
    let mut sums = vec![0.0; design.cells.len()];
    for (&i, &y) in index.iter().zip(targets) {
        sums[i] += y;
    }
    for (s, n) in sums.iter_mut().zip(&design.counts) {
        *s /= n;
    }
    Ok(design.fit(&sums))
}
