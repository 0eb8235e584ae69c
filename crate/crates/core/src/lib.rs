//! Estimation of sub-national, birth-cohort-specific routine-immunization
//! coverage from multiple complex household surveys.
//!
//! The pipeline has three stages: survey rosters and the campaign calendar
//! become eligible analysis cells (`cohort`), cells get design-based direct
//! estimates on the logit scale (`design`), and a Bayesian space-time
//! smoothing model turns those into coverage estimates per area and birth
//! cohort (`model`, `inference`), with campaign and survey effects treated as
//! bias terms. `assess` compares candidate interaction structures, `sim`
//! generates synthetic data with known truth, and `io`/`config`/`manifest`
//! carry the reproducible file formats.

pub mod assess;
pub mod cholesky;
pub mod cohort;
pub mod config;
pub mod dense;
pub mod design;
pub mod error;
pub mod gmrf;
pub mod graph;
pub mod inference;
pub mod io;
pub mod manifest;
pub mod model;
pub mod priors;
pub mod sim;
pub mod sparse;

pub use error::{Error, Result};
