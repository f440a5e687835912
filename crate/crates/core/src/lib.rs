//! Constrained batch policy learning on finite MDPs.
//!
//! The crate learns a policy from a fixed batch of logged transitions that
//! minimizes a primary cost subject to bounds on one or more constraint
//! costs. It plays a Lagrangian game between a best-response learner (fitted
//! Q iteration, LSPI, or an exact tabular solver) and a no-regret dual player
//! (exponentiated gradient or projected gradient), and certifies the result
//! with fitted Q evaluation. Exact oracles and importance-sampling estimators
//! are included for checking.
//!
//! The crate is `no_std` and only needs `alloc`.

#![no_std]
// `!(x > 0.0)` is used on purpose throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod approx;
pub mod dataset;
pub mod dual;
pub mod error;
pub mod exact;
pub mod fitted;
pub mod learner;
pub mod linalg;
pub mod mdp;
pub mod ope;
pub mod oracle;
pub mod policy;
pub mod rng;

pub use dataset::{collect, CollectOptions, Dataset, TransitionSample};
pub use dual::{DualFlavor, DualVector};
pub use error::{Error, Result};
pub use exact::{exact_policy_values, PolicyValues};
pub use learner::{exact_constrained_optimum, run, LearnerConfig, LearnerOutput, SubroutineFlavor};
pub use mdp::{build_combination_lock, build_frozenlake, build_random_mdp, CostSelector, Layout, TabularMdp};
pub use policy::{DeterministicPolicy, MixturePolicy, StochasticPolicy};
