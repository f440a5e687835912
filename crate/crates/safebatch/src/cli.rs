//! The `safebatch` command line.
//!
//! Every subcommand parses and validates all of its inputs before it writes
//! anything, and all randomness flows from `--seed` through labelled streams,
//! so the same arguments always produce byte-identical files.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use safebatch_core::approx::FeatureMap;
use safebatch_core::approx::QFunction;
use safebatch_core::dataset::{make_frozenlake_behavior, nearest_hole_policy, shortest_path_actions};
use safebatch_core::fitted::{fqe, fqi, lspi, FitParams, DEFAULT_LSPI_EPS, DEFAULT_LSPI_MAX_ITERS};
use safebatch_core::learner::{linear_grid, DualSign, FunctionClass};
use safebatch_core::mdp::FROZENLAKE_GAMMA;
use safebatch_core::ope::{median, ControlVariate, OpeConfig, OpeMethod};
use safebatch_core::*;

use crate::error::{Error, Result};
use crate::experiment::{self, ExperimentConfig};
use crate::io::{self, real, PolicyFile};

#[derive(Debug, Parser)]
#[command(name = "safebatch", version, about = "Constrained batch policy learning on tabular MDPs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Log trajectories from the FrozenLake behavior policy.
    Collect(CollectArgs),
    /// Run the constrained learner on a batch.
    Learn(LearnArgs),
    /// Fitted Q evaluation of a policy.
    Fqe(FqeArgs),
    /// Fitted Q iteration; prints the greedy policy.
    Fqi(FqiArgs),
    /// Least-squares policy iteration with indicator features.
    Lspi(LspiArgs),
    /// Exact values of a policy or mixture on a FrozenLake map.
    Oracle(OracleArgs),
    /// Compare FQE with PDIS, DR and WDR over data fractions.
    OpeCompare(OpeArgs),
    /// Collect, learn and score end to end on FrozenLake.
    FrozenlakeExperiment(ExperimentArgs),
}

/// How a run ended when no error occurred.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    /// The learner hit its round limit (or LSPI its iteration limit).
    NotConverged,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DualArg {
    Eg,
    Ogd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FlavorArg {
    Fitted,
    Lspi,
    Exact,
}

#[derive(Debug, Args)]
pub struct CollectArgs {
    /// `8x8`, `4x4` or a path to a layout file.
    #[arg(long, default_value = "8x8")]
    pub map: String,
    #[arg(long, default_value_t = 5000)]
    pub trajs: usize,
    #[arg(long, default_value_t = 100)]
    pub horizon: usize,
    /// Probability of a uniformly random action; the rest follows the
    /// shortest safe path.
    #[arg(long, default_value_t = 0.95)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Allow behavior policies that never take some actions.
    #[arg(long)]
    pub allow_partial_support: bool,
    #[arg(long)]
    pub out: PathBuf,
}

/// Learner settings shared by `learn` and `frozenlake-experiment`.
#[derive(Debug, Args)]
pub struct GameArgs {
    /// Constraint thresholds, comma separated.
    #[arg(long, default_value = "0.1")]
    pub tau: String,
    /// ℓ1 (simplex) or ℓ2 (ball) budget of the multipliers.
    #[arg(long = "B", default_value_t = 30.0)]
    pub budget: f64,
    #[arg(long, default_value_t = 50.0)]
    pub eta: f64,
    /// Stop once the duality gap is at most this.
    #[arg(long, default_value_t = 0.05)]
    pub omega: f64,
    #[arg(long, default_value_t = 100)]
    pub iters_fqi: usize,
    #[arg(long, default_value_t = 100)]
    pub iters_fqe: usize,
    /// Round limit; defaults to the worst-case bound for the tuned rate.
    #[arg(long)]
    pub rounds: Option<u64>,
    #[arg(long, value_enum, default_value_t = DualArg::Eg)]
    pub dual: DualArg,
    #[arg(long, value_enum, default_value_t = FlavorArg::Fitted)]
    pub flavor: FlavorArg,
    /// Apply the dual update formulas verbatim instead of as ascent steps.
    #[arg(long)]
    pub literal_dual_sign: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Start every fitted solve from a random Q seeded by `--seed`.
    #[arg(long)]
    pub random_init: bool,
    #[arg(long, default_value_t = safebatch_core::approx::DEFAULT_RIDGE)]
    pub ridge: f64,
    #[arg(long, default_value_t = FROZENLAKE_GAMMA)]
    pub gamma: f64,
}

impl GameArgs {
    fn config(&self) -> Result<LearnerConfig> {
        let tau = io::parse_reals(&self.tau)?;
        let mut config = LearnerConfig::new(tau, self.budget, self.eta, self.omega);
        config.k_fqi = self.iters_fqi;
        config.k_fqe = self.iters_fqe;
        config.max_rounds = self.rounds;
        config.ridge = self.ridge;
        config.seed = self.seed;
        config.random_init = self.random_init;
        config.gamma = self.gamma;
        config.dual_flavor = match self.dual {
            DualArg::Eg => DualFlavor::EgSimplex,
            DualArg::Ogd => DualFlavor::OgdBall,
        };
        config.dual_sign = if self.literal_dual_sign { DualSign::Literal } else { DualSign::Ascent };
        (config.subroutine, config.function_class) = match self.flavor {
            FlavorArg::Fitted => (SubroutineFlavor::Fitted, FunctionClass::Tabular),
            FlavorArg::Lspi => (SubroutineFlavor::Lspi, FunctionClass::OneHotLinear),
            FlavorArg::Exact => (SubroutineFlavor::Exact, FunctionClass::Tabular),
        };
        config.validate()?;
        Ok(config)
    }
}

#[derive(Debug, Args)]
pub struct LearnArgs {
    /// Dataset CSV; optional for the exact flavor.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// FrozenLake map giving the state space and initial state; required for
    /// the exact flavor.
    #[arg(long)]
    pub map: Option<String>,
    #[command(flatten)]
    pub game: GameArgs,
    #[arg(long)]
    pub trace_out: Option<PathBuf>,
    #[arg(long)]
    pub mixture_out: Option<PathBuf>,
    /// Write the best feasible member (by estimates) as a single policy.
    #[arg(long)]
    pub derandomize_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SolverArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// FrozenLake map; fixes the state space and initial distribution.
    /// Without it both come from the data.
    #[arg(long)]
    pub map: Option<String>,
    /// `c`, `g:<i>` or `scalarized:<l_1,...,l_m>`.
    #[arg(long, default_value = "c")]
    pub cost: String,
    #[arg(long, default_value_t = 0.0)]
    pub ridge: f64,
    #[arg(long, default_value_t = FROZENLAKE_GAMMA)]
    pub gamma: f64,
}

#[derive(Debug, Args)]
pub struct FqeArgs {
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Policy or mixture CSV.
    #[arg(long)]
    pub policy: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub iters: usize,
    /// Start from a random Q seeded by this value instead of zero.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub q_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FqiArgs {
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long, default_value_t = 100)]
    pub iters: usize,
    /// Start from a random Q seeded by this value instead of zero.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub q_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LspiArgs {
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Stop when successive weight vectors differ by at most this (ℓ2).
    #[arg(long, default_value_t = DEFAULT_LSPI_EPS)]
    pub eps: f64,
    #[arg(long, default_value_t = DEFAULT_LSPI_MAX_ITERS)]
    pub max_iters: usize,
    #[arg(long)]
    pub weights_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[arg(long, default_value = "8x8")]
    pub map: String,
    /// Policy or mixture CSV, or one of the built-in policies
    /// `shortest-path` and `nearest-hole`.
    #[arg(long)]
    pub policy: String,
    #[arg(long, default_value_t = FROZENLAKE_GAMMA)]
    pub gamma: f64,
}

#[derive(Debug, Args)]
pub struct OpeArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Deterministic policy CSV, or `shortest-path` / `nearest-hole`.
    #[arg(long)]
    pub policy: String,
    #[arg(long, default_value = "8x8")]
    pub map: String,
    #[arg(long, default_value = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1.0")]
    pub fractions: String,
    #[arg(long, default_value_t = 30)]
    pub trials: usize,
    #[arg(long, default_value = "g:1")]
    pub cost: String,
    #[arg(long, default_value_t = 100)]
    pub iters: usize,
    /// Fit the DR/WDR control variate on the other half of the trajectories.
    #[arg(long)]
    pub cross_fit: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long, default_value_t = FROZENLAKE_GAMMA)]
    pub gamma: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[arg(long, default_value = "8x8")]
    pub map: String,
    #[arg(long, default_value_t = 5000)]
    pub trajs: usize,
    #[arg(long, default_value_t = 100)]
    pub horizon: usize,
    #[arg(long, default_value_t = 0.95)]
    pub epsilon: f64,
    #[command(flatten)]
    pub game: GameArgs,
    /// Also sweep fixed multipliers `start:stop:step` with one-shot solves;
    /// the learned averaged multiplier is appended as the last point.
    #[arg(long)]
    pub grid: Option<String>,
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

// ── Dispatch ────────────────────────────────────────────────────────────

/// Parses `args` and runs the command. Usage errors print to `stderr`.
/// Returns the process exit code: 0 on success, 1 on any usage, validation
/// or runtime error, 2 when a solver did not converge.
pub fn main_with_args<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = write!(stderr, "{}", e.render());
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    match run(cli.command, stdout) {
        Ok(Outcome::Success) => 0,
        Ok(Outcome::NotConverged) => 2,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            1
        }
    }
}

pub fn run(command: Command, stdout: &mut dyn Write) -> Result<Outcome> {
    match command {
        Command::Collect(a) => collect_cmd(a, stdout),
        Command::Learn(a) => learn_cmd(a, stdout),
        Command::Fqe(a) => fqe_cmd(a, stdout),
        Command::Fqi(a) => fqi_cmd(a, stdout),
        Command::Lspi(a) => lspi_cmd(a, stdout),
        Command::Oracle(a) => oracle_cmd(a, stdout),
        Command::OpeCompare(a) => ope_cmd(a, stdout),
        Command::FrozenlakeExperiment(a) => experiment_cmd(a, stdout),
    }
}

fn frozenlake(map: &str, gamma: f64) -> Result<(Layout, TabularMdp)> {
    let layout = io::load_layout(map)?;
    let mdp = build_frozenlake(&layout)?.with_gamma(gamma)?;
    Ok((layout, mdp))
}

fn flush(stdout: &mut dyn Write) -> Result<()> {
    stdout.flush().map_err(|e| Error::io("<stdout>", e))
}

fn collect_cmd(a: CollectArgs, stdout: &mut dyn Write) -> Result<Outcome> {
    let (_, mdp) = frozenlake(&a.map, FROZENLAKE_GAMMA)?;
    let behavior = make_frozenlake_behavior(&mdp, a.epsilon)?;
    let mut options = CollectOptions::new(a.trajs, a.horizon);
    options.allow_partial_support = a.allow_partial_support;
    let data = collect(&mdp, &behavior, options, &mut rng::stream(a.seed, "collect"))?;
    io::save_dataset(&a.out, &data)?;
    writeln!(stdout, "trajectories,samples\n{},{}", data.num_trajectories(), data.len()).map_err(|e| Error::io("<stdout>", e))?;
    flush(stdout)?;
    Ok(Outcome::Success)
}

fn learn_cmd(a: LearnArgs, stdout: &mut dyn Write) -> Result<Outcome> {
    let config = a.game.config()?;
    let mdp = match &a.map {
        Some(map) => Some(frozenlake(map, config.gamma)?.1),
        None => None,
    };
    let data = match &a.data {
        Some(path) => io::load_dataset(path)?,
        None if config.subroutine == SubroutineFlavor::Exact => Dataset::empty(config.tau.len()),
        None => return Err(Error::Usage("--data is required unless --flavor exact".into())),
    };
    if config.subroutine == SubroutineFlavor::Exact && mdp.is_none() {
        return Err(Error::Usage("--flavor exact needs --map".into()));
    }
    if data.num_constraints() != config.tau.len() {
        return Err(Error::Usage(format!(
            "the data has {} constraint columns but --tau lists {} thresholds",
            data.num_constraints(),
            config.tau.len()
        )));
    }
    if let Some(mdp) = &mdp {
        check_domain(&data, mdp)?;
    }

    let out = safebatch_core::learner::run(&data, &config, mdp.as_ref())?;

    if let Some(path) = &a.trace_out {
        io::write_file(path, |w| io::write_trace(w, &out.trace))?;
    }
    if let Some(path) = &a.mixture_out {
        io::write_file(path, |w| io::write_mixture(w, &out.mixture))?;
    }
    if let Some(path) = &a.derandomize_out {
        let best = out.mixture.best_member(&config.tau).expect("a run has members");
        io::write_file(path, |w| io::write_policy(w, &out.mixture.members()[best]))?;
    }
    let last = out.final_record();
    let m = config.tau.len();
    let mut header = vec!["rounds".to_string(), "converged".into(), "C_hat".into()];
    header.extend((1..=m).map(|i| format!("G_hat_{i}")));
    header.extend(["L_max", "L_min", "gap"].map(String::from));
    let mut row = vec![out.rounds.to_string(), u8::from(out.converged()).to_string(), real(last.c_hat)];
    row.extend(last.g_hat.iter().map(|g| real(*g)));
    row.extend([real(last.l_max), real(last.l_min), real(last.gap)]);
    io::write_table(&mut *stdout, &header, &[row])?;
    flush(stdout)?;
    Ok(if out.converged() { Outcome::Success } else { Outcome::NotConverged })
}

fn check_domain(data: &Dataset, mdp: &TabularMdp) -> Result<()> {
    if data.observed_num_states() > mdp.num_states() || data.observed_num_actions() > mdp.num_actions() {
        return Err(Error::Usage(format!(
            "the data mentions states or actions outside the map ({} states, {} actions)",
            mdp.num_states(),
            mdp.num_actions()
        )));
    }
    Ok(())
}

/// Everything the fitted solvers need from `SolverArgs`, validated.
struct SolverSetup {
    data: Dataset,
    cost: CostSelector,
    num_states: usize,
    num_actions: usize,
    initial: Option<Vec<f64>>,
}

impl SolverArgs {
    fn setup(&self) -> Result<SolverSetup> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Usage(format!("--gamma must lie in (0, 1), got {}", self.gamma)));
        }
        if !(self.ridge >= 0.0 && self.ridge.is_finite()) {
            return Err(Error::Usage("--ridge must be finite and non-negative".into()));
        }
        let cost = io::parse_cost(&self.cost)?;
        let data = io::load_dataset(&self.data)?;
        cost.validate(data.num_constraints())?;
        if data.is_empty() {
            return Err(Error::Usage("the dataset is empty".into()));
        }
        let (num_states, num_actions, initial) = match &self.map {
            Some(map) => {
                let (_, mdp) = frozenlake(map, self.gamma)?;
                check_domain(&data, &mdp)?;
                (mdp.num_states(), mdp.num_actions(), Some(mdp.initial_distribution().to_vec()))
            }
            None => (data.observed_num_states(), data.observed_num_actions(), None),
        };
        Ok(SolverSetup { data, cost, num_states, num_actions, initial })
    }

    fn params(&self, iterations: usize) -> Result<FitParams> {
        if iterations == 0 {
            return Err(Error::Usage("--iters must be at least 1".into()));
        }
        Ok(FitParams { gamma: self.gamma, iterations, ridge: self.ridge })
    }
}

fn initial_q(s: &SolverSetup, seed: Option<u64>) -> QFunction {
    let q = QFunction::tabular_zeros(s.num_states, s.num_actions);
    match seed {
        Some(seed) => q.randomized(1.0, &mut rng::stream(seed, "q-init")),
        None => q,
    }
}

fn fqe_cmd(a: FqeArgs, stdout: &mut dyn Write) -> Result<Outcome> {
    let setup = a.solver.setup()?;
    let params = a.solver.params(a.iters)?;
    let policy = io::load_policy_file(&a.policy, setup.num_actions)?;
    let members: Vec<(&DeterministicPolicy, f64)> = match &policy {
        PolicyFile::Deterministic(p) => vec![(p, 1.0)],
        PolicyFile::Mixture(mix) => mix.members().iter().zip(mix.weights()).collect(),
    };
    if members.iter().any(|(p, _)| p.num_states() != setup.num_states) {
        return Err(Error::Usage(format!("the policy does not cover the {} states of the data", setup.num_states)));
    }
    if a.q_out.is_some() && members.len() > 1 {
        return Err(Error::Usage("--q-out needs a single policy, not a mixture".into()));
    }
    let template = initial_q(&setup, a.seed);
    let mut estimate = 0.0;
    let mut last_q = None;
    for (pi, w) in members {
        let (v, run) = fqe(&setup.data, pi, &setup.cost, &template, &params, setup.initial.as_deref())?;
        estimate += w * v;
        last_q = Some(run.q_final);
    }
    if let (Some(path), Some(q)) = (&a.q_out, &last_q) {
        io::write_file(path, |w| io::write_q(w, q))?;
    }
    io::write_table(&mut *stdout, &["cost".into(), "estimate".into()], &[vec![setup.cost.to_string(), real(estimate)]])?;
    flush(stdout)?;
    Ok(Outcome::Success)
}

fn fqi_cmd(a: FqiArgs, stdout: &mut dyn Write) -> Result<Outcome> {
    let setup = a.solver.setup()?;
    let params = a.solver.params(a.iters)?;
    let (pi, run) = fqi(&setup.data, &setup.cost, &initial_q(&setup, a.seed), &params)?;
    if let Some(path) = &a.q_out {
        io::write_file(path, |w| io::write_q(w, &run.q_final))?;
    }
    io::write_policy(&mut *stdout, &pi)?;
    flush(stdout)?;
    Ok(Outcome::Success)
}

fn lspi_cmd(a: LspiArgs, stdout: &mut dyn Write) -> Result<Outcome> {
    let setup = a.solver.setup()?;
    if !(a.eps > 0.0) || a.max_iters == 0 {
        return Err(Error::Usage("--eps must be positive and --max-iters at least 1".into()));
    }
    let features = FeatureMap::one_hot(setup.num_states, setup.num_actions);
    let run = lspi(&setup.data, &setup.cost, &features, a.solver.gamma, a.eps, a.max_iters, a.solver.ridge)?;
    let q = QFunction::linear(std::sync::Arc::new(features), run.weights.clone())?;
    if let Some(path) = &a.weights_out {
        io::write_file(path, |w| io::write_q(w, &q))?;
    }
    io::write_policy(&mut *stdout, &q.greedy_policy())?;
    flush(stdout)?;
    Ok(if run.converged { Outcome::Success } else { Outcome::NotConverged })
}

/// A policy named on the command line: a file, or a built-in FrozenLake
/// policy.
fn named_policy(name: &str, layout: &Layout, mdp: &TabularMdp) -> Result<PolicyFile> {
    match name {
        "nearest-hole" => Ok(PolicyFile::Deterministic(nearest_hole_policy(layout)?)),
        "shortest-path" => {
            let actions = shortest_path_actions(mdp).into_iter().map(|a| a.unwrap_or(0)).collect();
            Ok(PolicyFile::Deterministic(DeterministicPolicy::new(actions, mdp.num_actions())?))
        }
        path => {
            let policy = io::load_policy_file(Path::new(path), mdp.num_actions())?;
            let states = match &policy {
                PolicyFile::Deterministic(p) => p.num_states(),
                PolicyFile::Mixture(mix) => mix.members()[0].num_states(),
            };
            if states != mdp.num_states() {
                return Err(Error::Usage(format!("{path} covers {states} states, the map has {}", mdp.num_states())));
            }
            Ok(policy)
        }
    }
}

fn oracle_cmd(a: OracleArgs, stdout: &mut dyn Write) -> Result<Outcome> {
    let (layout, mdp) = frozenlake(&a.map, a.gamma)?;
    let policy = named_policy(&a.policy, &layout, &mdp)?;
    let v = policy.exact_values(&mdp)?;
    let mut header = vec!["C".to_string()];
    header.extend((1..=v.g.len()).map(|i| format!("G_{i}")));
    let mut row = vec![real(v.c)];
    row.extend(v.g.iter().map(|g| real(*g)));
    io::write_table(&mut *stdout, &header, &[row])?;
    flush(stdout)?;
    Ok(Outcome::Success)
}

fn ope_cmd(a: OpeArgs, stdout: &mut dyn Write) -> Result<Outcome> {
    let (layout, mdp) = frozenlake(&a.map, a.gamma)?;
    let fractions = io::parse_reals(&a.fractions)?;
    if fractions.is_empty() || fractions.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
        return Err(Error::Usage("--fractions must list values in (0, 1]".into()));
    }
    if a.iters == 0 {
        return Err(Error::Usage("--iters must be at least 1".into()));
    }
    if a.jobs == Some(0) {
        return Err(Error::Usage("--jobs must be at least 1".into()));
    }
    let policy = match named_policy(&a.policy, &layout, &mdp)? {
        PolicyFile::Deterministic(p) => p,
        PolicyFile::Mixture(_) => return Err(Error::Usage("off-policy evaluation needs a single deterministic policy".into())),
    };
    let data = io::load_dataset(&a.data)?;
    check_domain(&data, &mdp)?;
    if data.is_empty() {
        return Err(Error::Usage("the dataset is empty".into()));
    }
    let mut config = OpeConfig::new(a.gamma, io::parse_cost(&a.cost)?);
    config.cost.validate(data.num_constraints())?;
    config.fqe_iterations = a.iters;
    config.seed = a.seed;
    config.control_variate = if a.cross_fit { ControlVariate::CrossFit } else { ControlVariate::SameData };

    let records = experiment::ope_comparison_parallel(&data, &policy, &mdp, &fractions, a.trials, &config, a.jobs)?;
    io::write_file(&a.out, |w| io::write_ope_report(w, &records))?;

    let mut rows = Vec::new();
    for &f in &fractions {
        for method in OpeMethod::ALL {
            let mut errors: Vec<f64> = records.iter().filter(|r| r.method == method && r.fraction == f).map(|r| r.abs_error).collect();
            if let Some(med) = median(&mut errors) {
                rows.push(vec![method.name().to_string(), real(f), real(med)]);
            }
        }
    }
    io::write_table(&mut *stdout, &["method".into(), "fraction".into(), "median_abs_error".into()], &rows)?;
    flush(stdout)?;
    Ok(Outcome::Success)
}

fn parse_grid(spec: &str) -> Result<Vec<Vec<f64>>> {
    let parts = spec.split(':').map(|s| s.trim().parse::<f64>()).collect::<std::result::Result<Vec<_>, _>>();
    match parts.as_deref() {
        Ok([start, stop, step]) => Ok(linear_grid(*start, *stop, *step)?),
        _ => Err(Error::Usage(format!("--grid expects start:stop:step, got {spec:?}"))),
    }
}

fn experiment_cmd(a: ExperimentArgs, stdout: &mut dyn Write) -> Result<Outcome> {
    let mut config = ExperimentConfig::frozenlake(io::load_layout(&a.map)?);
    config.trajectories = a.trajs;
    config.horizon = a.horizon;
    config.epsilon = a.epsilon;
    config.seed = a.game.seed;
    config.learner = a.game.config()?;
    config.grid = a.grid.as_deref().map(parse_grid).transpose()?;
    if a.jobs == Some(0) {
        return Err(Error::Usage("--jobs must be at least 1".into()));
    }
    config.jobs = a.jobs;
    config.validate()?;

    let out = experiment::frozenlake_experiment(&config)?;

    let dir = &a.out_dir;
    io::save_dataset(&dir.join("dataset.csv"), &out.dataset)?;
    io::write_file(&dir.join("trace.csv"), |w| io::write_trace(w, &out.learner.trace))?;
    let (header, rows) = experiment::values_table(&out.values);
    io::write_file(&dir.join("values.csv"), |w| io::write_table(w, &header, &rows))?;
    io::write_file(&dir.join("mixture.csv"), |w| io::write_mixture(w, &out.learner.mixture))?;
    if let Some(best) = out.learner.mixture.best_member(&config.learner.tau) {
        io::write_file(&dir.join("policy.csv"), |w| io::write_policy(w, &out.learner.mixture.members()[best]))?;
    }
    let (header, rows) = experiment::report_table(&out.report);
    io::write_file(&dir.join("report.csv"), |w| io::write_table(w, &header, &rows))?;
    io::write_table(&mut *stdout, &header, &rows)?;
    if !out.grid.is_empty() {
        let (header, rows) = experiment::grid_table(&out.grid);
        io::write_file(&dir.join("grid.csv"), |w| io::write_table(w, &header, &rows))?;
    }
    flush(stdout)?;
    Ok(if out.learner.converged() { Outcome::Success } else { Outcome::NotConverged })
}
