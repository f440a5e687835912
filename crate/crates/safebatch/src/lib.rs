//! File formats, experiment harnesses and the `safebatch` command line on
//! top of [`safebatch_core`].
//!
//! The core crate is `no_std`; everything that touches files, threads or the
//! process environment lives here.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod experiment;
pub mod io;

pub use error::{Error, Result};
