//! Strategic joining and reneging in an observable M/M/1 queue with
//! Bernoulli feedback.
//!
//! Customers see their position before joining and pay waiting cost at
//! rate 1 for a reward `r0` collected on successful service. The crate
//! builds the tagged-customer Markov chains, solves their Poisson
//! equations two ways, finds equilibrium and socially optimal thresholds,
//! and checks the results against a discrete-event simulator.

pub mod analytics;
pub mod equilibrium;
pub mod error;
pub mod model;
pub mod paradox;
pub mod qbd;
pub mod root;
pub mod sim;
pub mod solver;
pub mod welfare;

pub use analytics::Mode;
pub use error::{Error, Result};
pub use model::{ModelParams, StateSpace, Threshold};
