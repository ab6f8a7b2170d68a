//! Target-population average treatment effects (TATE) from randomized trial
//! data, with two sensitivity analyses for effect modifiers that are observed
//! in the trial but not in the target population.
//!
//! The crate is organised bottom-up:
//!
//! - [`data`]: typed tables, variable roles, population targets, coverage.
//! - [`design`] and [`estimation`]: design matrices, WLS, IRLS, random
//!   intercepts, covariance estimators and linear combinations.
//! - [`weighting`]: trial-to-population and within-trial weights.
//! - [`sensitivity`]: the outcome-model method (Method 1), the weighted
//!   method (Method 2), the sensitivity sweep and the modifier scan.
//! - [`simulation`]: a seeded Monte Carlo harness comparing the two methods.
//! - [`plot`]: plot-ready polylines and SVG rendering.
//! - [`synthetic`]: a seeded trial and population resembling an HIV study.

pub mod data;
pub mod design;
pub mod error;
pub mod estimation;
pub mod plot;
pub mod sensitivity;
pub mod simulation;
pub mod stats;
pub mod synthetic;
pub mod weighting;

pub use error::{Error, ErrorClass, Result};
