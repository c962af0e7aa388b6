//! Staged rehabilitation simulator with grouping-based offline reinforcement
//! learning.
//!
//! The crate covers the whole pipeline: a synthetic world with per-stage
//! treatment benefits ([`sim`]), behaviour cohorts and their per-action split
//! ([`cohort`]), treatment groupings learned or given ([`grouping`]), Fitted Q
//! Iteration over a dummy-coded linear model ([`fqi`]), selection policies
//! ([`policy`]) and the experiment harness that sweeps them ([`experiment`]).

pub mod cohort;
pub mod config;
pub mod error;
pub mod experiment;
pub mod fqi;
pub mod grouping;
pub mod lstsq;
pub mod par;
pub mod params;
pub mod policy;
pub mod rng;
pub mod sim;

pub use error::{Error, Result};
