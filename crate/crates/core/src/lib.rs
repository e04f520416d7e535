//! Variance decomposition for conditionally repeated biomarker measurements.
//!
//! A second measurement is recorded only when the first falls below a
//! threshold. The crate estimates how much of the observed spread comes from
//! the population and how much from the measurement procedure, and turns a
//! fitted model into eligibility probabilities and misclassification rates.
//!
//! Layout:
//!
//! - [`stats`]: densities, truncated-normal moment formulas, Gauss–Hermite rules.
//! - [`simulate`]: synthetic datasets under hard-cutoff or probabilistic retesting.
//! - [`freq`]: naive, conditional-expectation and maximum-likelihood estimators.
//! - [`bayes`]: hierarchical models a–d fitted by adaptive Metropolis on the
//!   marginalized posterior.
//! - [`select`]: K-fold cross-validated marginal predictive density.
//! - [`decision`]: eligibility probabilities and strategy misclassification tables.
//! - [`io`]: CSV datasets, parameter files and run artifacts.

pub mod bayes;
pub mod decision;
pub mod error;
pub mod freq;
pub mod io;
pub mod select;
pub mod simulate;
pub mod stats;

pub use error::{Error, Result};
pub use simulate::{MeasurementPair, RetestPolicy};
pub use stats::MeasurementDensity;
