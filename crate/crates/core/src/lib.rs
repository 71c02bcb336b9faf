//! Causal influence estimation on narrative interaction networks.
//!
//! The pipeline turns tweet records into a retweet influence graph, fits a
//! conditional Poisson potential-outcome model with multi-hop exposure by
//! Metropolis-within-Gibbs sampling, and imputes counterfactual outcomes to
//! estimate how many additional narrative tweets each account generates.
//! Fisher-information diagnostics bound the precision of the fitted
//! coefficients.

pub mod dataset;
pub mod error;
pub mod estimand;
pub mod exposure;
pub mod fisher;
pub mod ingest;
pub mod graph;
pub mod inference;
pub mod model;
pub mod simulate;
pub mod stats;

pub use error::{Error, Result};
