//! Finite MDPs with a primary cost and a vector of constraint costs, plus the
//! reference environments used throughout the crate: FrozenLake grids, the
//! combination lock and seeded random MDPs.
//!
//! Costs are attached to state-action pairs. Terminal states are absorbing
//! self-loops with zero cost on every channel, so discounted infinite-horizon
//! values coincide with episodic returns.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::Rng;

use crate::error::{bail, Error, Result};
use crate::rng;

/// Grid action indices. Ties anywhere in the crate resolve to the lowest index.
pub const NORTH: usize = 0;
pub const SOUTH: usize = 1;
pub const EAST: usize = 2;
pub const WEST: usize = 3;

/// Combination-lock actions.
pub const LOCK_RESET: usize = 0;
pub const LOCK_ADVANCE: usize = 1;

const ROW_TOLERANCE: f64 = 1e-12;

/// Discount used for FrozenLake grids unless overridden.
pub const FROZENLAKE_GAMMA: f64 = 0.95;

/// Raw ingredients of a [`TabularMdp`], indexed by `x * num_actions + a`.
#[derive(Debug, Clone)]
pub struct MdpParts {
    pub num_states: usize,
    pub num_actions: usize,
    pub num_constraints: usize,
    /// Sparse rows of `P(x' | x, a)`.
    pub transitions: Vec<Vec<(usize, f64)>>,
    pub cost_c: Vec<f64>,
    /// Row-major `(x * num_actions + a) * num_constraints + i`.
    pub cost_g: Vec<f64>,
    pub gamma: f64,
    pub initial: Vec<f64>,
    pub terminal: Vec<bool>,
}

/// Immutable finite MDP `(X, A, c, g, P, gamma, chi)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    num_states: usize,
    num_actions: usize,
    num_constraints: usize,
    transitions: Vec<Vec<(usize, f64)>>,
    cost_c: Vec<f64>,
    cost_g: Vec<f64>,
    gamma: f64,
    initial: Vec<f64>,
    terminal: Vec<bool>,
}

impl TabularMdp {
    /// Validates `parts` and builds the MDP.
    ///
    /// Terminal states are rewritten as zero-cost self-loops.
    pub fn new(parts: MdpParts) -> Result<Self> {
        let MdpParts {
            num_states: s,
            num_actions: na,
            num_constraints: m,
            mut transitions,
            mut cost_c,
            mut cost_g,
            gamma,
            initial,
            terminal,
        } = parts;
        if s == 0 || na == 0 {
            bail!(Argument, "an MDP needs at least one state and one action");
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            bail!(Argument, "discount must lie in (0, 1), got {gamma}");
        }
        if transitions.len() != s * na || cost_c.len() != s * na || cost_g.len() != s * na * m {
            bail!(Argument, "table sizes do not match {s} states x {na} actions x {m} constraints");
        }
        if initial.len() != s || terminal.len() != s {
            bail!(Argument, "initial distribution and terminal flags need one entry per state");
        }
        for (x, &t) in terminal.iter().enumerate() {
            if t {
                for a in 0..na {
                    let k = x * na + a;
                    transitions[k] = vec![(x, 1.0)];
                    cost_c[k] = 0.0;
                    cost_g[k * m..(k + 1) * m].iter_mut().for_each(|g| *g = 0.0);
                }
            }
        }
        for (k, row) in transitions.iter_mut().enumerate() {
            row.retain(|&(_, p)| p != 0.0);
            if row.iter().any(|&(y, p)| y >= s || !(p > 0.0) || !p.is_finite()) {
                bail!(Argument, "transition row {k} has an invalid entry");
            }
            let total: f64 = row.iter().map(|e| e.1).sum();
            if (total - 1.0).abs() > ROW_TOLERANCE {
                bail!(Argument, "transition row for (x={}, a={}) sums to {total}", k / na, k % na);
            }
            row.sort_by_key(|e| e.0);
        }
        if cost_c.iter().any(|c| !c.is_finite()) {
            bail!(Argument, "primary costs must be finite");
        }
        if cost_g.iter().any(|g| !(g.is_finite() && *g >= 0.0)) {
            bail!(Argument, "constraint costs must be finite and non-negative");
        }
        let mass: f64 = initial.iter().sum();
        if initial.iter().any(|p| !(*p >= 0.0)) || (mass - 1.0).abs() > ROW_TOLERANCE {
            bail!(Argument, "initial distribution must be a probability vector");
        }
        Ok(Self { num_states: s, num_actions: na, num_constraints: m, transitions, cost_c, cost_g, gamma, initial, terminal })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    /// Number of constraint channels `m`.
    pub fn num_constraints(&self) -> usize {
        self.num_constraints
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn initial_distribution(&self) -> &[f64] {
        &self.initial
    }

    pub fn is_terminal(&self, x: usize) -> bool {
        self.terminal[x]
    }

    pub fn terminal_states(&self) -> impl Iterator<Item = usize> + '_ {
        self.terminal.iter().enumerate().filter(|(_, t)| **t).map(|(x, _)| x)
    }

    /// Non-zero entries of `P(. | x, a)`, sorted by next state.
    pub fn successors(&self, x: usize, a: usize) -> &[(usize, f64)] {
        &self.transitions[x * self.num_actions + a]
    }

    pub fn transition_prob(&self, x: usize, a: usize, next: usize) -> f64 {
        self.successors(x, a).iter().find(|e| e.0 == next).map_or(0.0, |e| e.1)
    }

    pub fn cost_c(&self, x: usize, a: usize) -> f64 {
        self.cost_c[x * self.num_actions + a]
    }

    pub fn cost_g(&self, x: usize, a: usize) -> &[f64] {
        let m = self.num_constraints;
        let k = x * self.num_actions + a;
        &self.cost_g[k * m..(k + 1) * m]
    }

    /// Largest `|c(x, a)|`.
    pub fn max_abs_cost(&self) -> f64 {
        self.cost_c.iter().fold(0.0, |m, c| m.max(c.abs()))
    }

    /// Largest `g_i(x, a)` over all pairs and channels.
    pub fn max_constraint_cost(&self) -> f64 {
        self.cost_g.iter().fold(0.0, |m, g| m.max(*g))
    }

    /// Same MDP under a different discount.
    pub fn with_gamma(mut self, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma < 1.0) {
            bail!(Argument, "discount must lie in (0, 1), got {gamma}");
        }
        self.gamma = gamma;
        Ok(self)
    }

    /// Same MDP started from `initial` instead.
    pub fn with_initial_distribution(mut self, initial: Vec<f64>) -> Result<Self> {
        let mass: f64 = initial.iter().sum();
        if initial.len() != self.num_states || initial.iter().any(|p| !(*p >= 0.0)) || (mass - 1.0).abs() > ROW_TOLERANCE {
            bail!(Argument, "initial distribution must be a probability vector over states");
        }
        self.initial = initial;
        Ok(self)
    }

    /// Scalar cost of `(x, a)` under `selector`.
    pub fn cost(&self, selector: &CostSelector, x: usize, a: usize) -> f64 {
        selector.apply(self.cost_c(x, a), self.cost_g(x, a))
    }

    pub(crate) fn check_state_action(&self, x: usize, a: usize) -> Result<()> {
        if x >= self.num_states {
            bail!(Argument, "state {x} out of range (0..{})", self.num_states);
        }
        if a >= self.num_actions {
            bail!(Argument, "action {a} out of range (0..{})", self.num_actions);
        }
        Ok(())
    }
}

// ── Cost channels ───────────────────────────────────────────────────────

/// Which scalar cost a solver works on.
#[derive(Debug, Clone, PartialEq)]
pub enum CostSelector {
    /// The main objective `c`.
    Primary,
    /// Constraint channel `g_i` (zero-based).
    Constraint(usize),
    /// `c + lambda^T g` with `lambda` of length `m`.
    Scalarized(Vec<f64>),
}

impl CostSelector {
    #[inline]
    pub fn apply(&self, c: f64, g: &[f64]) -> f64 {
        match self {
            CostSelector::Primary => c,
            CostSelector::Constraint(i) => g[*i],
            CostSelector::Scalarized(lambda) => c + lambda.iter().zip(g).map(|(l, gi)| l * gi).sum::<f64>(),
        }
    }

    /// Checks the selector against a problem with `m` constraints.
    pub fn validate(&self, m: usize) -> Result<()> {
        match self {
            CostSelector::Primary => Ok(()),
            CostSelector::Constraint(i) if *i < m => Ok(()),
            CostSelector::Constraint(i) => {
                bail!(Argument, "constraint index {i} out of range for m = {m}")
            }
            CostSelector::Scalarized(lambda) => {
                if lambda.len() != m {
                    bail!(Argument, "scalarization needs {m} multipliers, got {}", lambda.len());
                }
                if lambda.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
                    bail!(Argument, "multipliers must be finite and non-negative");
                }
                Ok(())
            }
        }
    }
}

impl fmt::Display for CostSelector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CostSelector::Primary => f.write_str("c"),
            CostSelector::Constraint(i) => write!(f, "g:{}", i + 1),
            CostSelector::Scalarized(l) => {
                f.write_str("scalarized:")?;
                for (i, v) in l.iter().enumerate() {
                    if i > 0 {
                        f.write_str(",")?;
                    }
                    write!(f, "{v}")?;
                }
                Ok(())
            }
        }
    }
}

// ── Simulation ──────────────────────────────────────────────────────────

/// Outcome of one simulated transition.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub next: usize,
    pub c: f64,
    pub g: Vec<f64>,
    pub terminal: bool,
}

/// Samples `x' ~ P(. | x, a)` and reports the costs of `(x, a)`.
pub fn step<R: Rng + ?Sized>(mdp: &TabularMdp, x: usize, a: usize, rng: &mut R) -> Result<Step> {
    mdp.check_state_action(x, a)?;
    let next = rng::categorical_sparse(rng, mdp.successors(x, a));
    Ok(Step { next, c: mdp.cost_c(x, a), g: mdp.cost_g(x, a).to_vec(), terminal: mdp.is_terminal(next) })
}

// ── FrozenLake ──────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cell {
    Start,
    Free,
    Hole,
    Goal,
}

impl Cell {
    fn from_char(ch: char) -> Option<Self> {
        match ch {
            'S' => Some(Cell::Start),
            'F' => Some(Cell::Free),
            'H' => Some(Cell::Hole),
            'G' => Some(Cell::Goal),
            _ => None,
        }
    }

    fn as_char(self) -> char {
        match self {
            Cell::Start => 'S',
            Cell::Free => 'F',
            Cell::Hole => 'H',
            Cell::Goal => 'G',
        }
    }
}

/// Rectangular FrozenLake map. State index of `(row, col)` is `row * cols + col`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    rows: usize,
    cols: usize,
    cells: Vec<Cell>,
}

const STANDARD_8X8: &str = "SFFFFFFF\nFFFFFFFF\nFFFHFFFF\nFFFFFHFF\nFFFHFFFF\nFHHFFFHF\nFHFFHFHF\nFFFHFFFG\n";
const STANDARD_4X4: &str = "SFFF\nFHFH\nFFFH\nHFFG\n";

impl Layout {
    /// Builds a layout from rows of cells.
    pub fn new(grid: Vec<Vec<Cell>>) -> Result<Self> {
        let rows = grid.len();
        let cols = grid.first().map_or(0, Vec::len);
        if rows == 0 || cols == 0 {
            bail!(Config, "layout is empty");
        }
        if let Some(r) = grid.iter().position(|row| row.len() != cols) {
            bail!(Config, "layout row {} has {} cells, expected {cols}", r + 1, grid[r].len());
        }
        let cells: Vec<Cell> = grid.into_iter().flatten().collect();
        let starts = cells.iter().filter(|c| **c == Cell::Start).count();
        if starts != 1 {
            bail!(Config, "layout needs exactly one start cell, found {starts}");
        }
        if !cells.contains(&Cell::Goal) {
            bail!(Config, "layout needs at least one goal cell");
        }
        Ok(Self { rows, cols, cells })
    }

    /// Parses one row per line using the characters `S`, `F`, `H`, `G`.
    /// Blank lines and surrounding whitespace are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut grid = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let row = line
                .chars()
                .map(|ch| {
                    Cell::from_char(ch).ok_or_else(|| {
                        Error::Config(alloc::format!("line {}: unexpected character {ch:?} (expected S, F, H or G)", lineno + 1))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            grid.push(row);
        }
        Self::new(grid)
    }

    /// The 8x8 FrozenLake map.
    pub fn standard_8x8() -> Self {
        Self::parse(STANDARD_8X8).expect("built-in map is valid")
    }

    /// The 4x4 FrozenLake map.
    pub fn standard_4x4() -> Self {
        Self::parse(STANDARD_4X4).expect("built-in map is valid")
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn cell(&self, row: usize, col: usize) -> Cell {
        self.cells[row * self.cols + col]
    }

    pub fn cell_at(&self, state: usize) -> Cell {
        self.cells[state]
    }

    pub fn start_state(&self) -> usize {
        self.cells.iter().position(|c| *c == Cell::Start).expect("validated")
    }

    /// Cell reached from `state` by a grid action; off-grid moves stay put.
    pub fn neighbor(&self, state: usize, action: usize) -> usize {
        let (r, c) = (state / self.cols, state % self.cols);
        let (nr, nc) = match action {
            NORTH if r > 0 => (r - 1, c),
            SOUTH if r + 1 < self.rows => (r + 1, c),
            EAST if c + 1 < self.cols => (r, c + 1),
            WEST if c > 0 => (r, c - 1),
            _ => (r, c),
        };
        nr * self.cols + nc
    }

    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.rows * (self.cols + 1));
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.push(self.cell(r, c).as_char());
            }
            out.push('\n');
        }
        out
    }
}

/// Deterministic FrozenLake: four grid actions, `c = -1` on the transition
/// entering a goal, `g_1 = 1` on the transition entering a hole, episodes end
/// at goals and holes. Uses discount [`FROZENLAKE_GAMMA`].
pub fn build_frozenlake(layout: &Layout) -> Result<TabularMdp> {
    let s = layout.rows * layout.cols;
    let na = 4;
    let mut transitions = Vec::with_capacity(s * na);
    let mut cost_c = vec![0.0; s * na];
    let mut cost_g = vec![0.0; s * na];
    let terminal: Vec<bool> = layout.cells.iter().map(|c| matches!(c, Cell::Hole | Cell::Goal)).collect();
    for x in 0..s {
        for a in 0..na {
            let next = layout.neighbor(x, a);
            transitions.push(vec![(next, 1.0)]);
            if !terminal[x] {
                match layout.cell_at(next) {
                    Cell::Goal => cost_c[x * na + a] = -1.0,
                    Cell::Hole => cost_g[x * na + a] = 1.0,
                    _ => {}
                }
            }
        }
    }
    let mut initial = vec![0.0; s];
    initial[layout.start_state()] = 1.0;
    TabularMdp::new(MdpParts {
        num_states: s,
        num_actions: na,
        num_constraints: 1,
        transitions,
        cost_c,
        cost_g,
        gamma: FROZENLAKE_GAMMA,
        initial,
        terminal,
    })
}

// ── Combination lock ────────────────────────────────────────────────────

/// Chain of `n` states: [`LOCK_RESET`] returns to the first state,
/// [`LOCK_ADVANCE`] moves one step along the chain. Entering the last state
/// costs `-1` and ends the episode. No constraints; discount 0.9.
pub fn build_combination_lock(n: usize) -> Result<TabularMdp> {
    if n < 2 {
        bail!(Argument, "combination lock needs at least 2 states, got {n}");
    }
    let na = 2;
    let mut transitions = Vec::with_capacity(n * na);
    let mut cost_c = vec![0.0; n * na];
    for x in 0..n {
        transitions.push(vec![(0, 1.0)]);
        let next = (x + 1).min(n - 1);
        transitions.push(vec![(next, 1.0)]);
        if next == n - 1 && x != n - 1 {
            cost_c[x * na + LOCK_ADVANCE] = -1.0;
        }
    }
    let mut terminal = vec![false; n];
    terminal[n - 1] = true;
    let mut initial = vec![0.0; n];
    initial[0] = 1.0;
    TabularMdp::new(MdpParts {
        num_states: n,
        num_actions: na,
        num_constraints: 0,
        transitions,
        cost_c,
        cost_g: Vec::new(),
        gamma: 0.9,
        initial,
        terminal,
    })
}

// ── Random MDPs ─────────────────────────────────────────────────────────

/// Seeded random MDP: Dirichlet(1) transition rows and initial distribution,
/// `c ~ U[0, 1)`, `g_i ~ U[0, 1)`, discount 0.9, no terminal states.
pub fn build_random_mdp(num_states: usize, num_actions: usize, m: usize, seed: u64) -> Result<TabularMdp> {
    if num_states == 0 || num_actions == 0 {
        bail!(Argument, "random MDP needs at least one state and one action");
    }
    let mut r = rng::stream(seed, "random-mdp");
    let mut row = vec![0.0; num_states];
    let mut transitions = Vec::with_capacity(num_states * num_actions);
    for _ in 0..num_states * num_actions {
        rng::flat_dirichlet(&mut r, &mut row);
        transitions.push(row.iter().copied().enumerate().filter(|e| e.1 > 0.0).collect());
    }
    let cost_c = (0..num_states * num_actions).map(|_| rng::unit(&mut r)).collect();
    let cost_g = (0..num_states * num_actions * m).map(|_| rng::unit(&mut r)).collect();
    let mut initial = vec![0.0; num_states];
    rng::flat_dirichlet(&mut r, &mut initial);
    TabularMdp::new(MdpParts {
        num_states,
        num_actions,
        num_constraints: m,
        transitions,
        cost_c,
        cost_g,
        gamma: 0.9,
        initial,
        terminal: vec![false; num_states],
    })
}
