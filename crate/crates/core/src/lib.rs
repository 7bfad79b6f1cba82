//! Structural model of the trade-off between ambulatory and inpatient care.
//!
//! The crate covers the closed-form model ([`model`]), severity measures
//! ([`severity`]), a seeded synthetic-data generator ([`synth`]), the two-step
//! estimator plus reduced-form regressions ([`estimation`]), the policy
//! counterfactual engine ([`counterfactual`]) and the file formats,
//! configuration and pipeline commands ([`cli_io`]).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli_io;
pub mod counterfactual;
pub mod error;
pub mod estimation;
pub mod model;
pub mod par;
pub mod rng;
pub mod severity;
pub mod synth;

pub use error::{Error, Result};
