//! Prediction-error analysis for data pooled from two sources.
//!
//! When observations come from two labelled datasets that may or may not
//! follow the same regression model, the expected squared error of
//! cross-predicting one dataset from the other has a closed form with three
//! additive parts: the target's own noise, a penalty for coefficient
//! variation between the datasets, and propagated estimation noise. This
//! crate implements those formulas, two Bayesian routes to the variance
//! parameters they need (closed-form posterior summaries under a hyper-g
//! prior, and a Gibbs sampler with a half-Cauchy prior on the
//! coefficient-variation scale), a marginal-likelihood-weighted search for
//! predictors common to both datasets, and a Monte Carlo harness that checks
//! the closed forms by brute force.

pub mod dataio;
pub mod error;
pub mod gibbs;
pub mod hyperg;
pub mod linmodel;
pub mod montecarlo;
pub mod rng;
pub mod search;

pub use dataio::{RawTable, StandardizedData, TwoSetData};
pub use error::{Error, Result};
pub use linmodel::{Direction, ErrorBreakdown, ModelPair, VarianceEstimates};
