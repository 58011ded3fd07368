//! Internal DLA on cylinder graphs `V_N x Z` over vertex-transitive base graphs.
//!
//! The library is organized around the pipeline of a simulation study:
//!
//! * [`graphs`] builds the base graphs and the lazy walk kernel,
//! * [`spectral`] provides eigendecompositions, closed-form spectra and the
//!   vertical scaling quantities derived from them,
//! * [`walk`] implements the cylinder random walk with reproducible
//!   counter-based streams and the sub-zero fast-forward,
//! * [`idla`] holds the cluster state and the aggregation processes
//!   (free, stopped, balanced release, replay, resampling),
//! * [`harmonic`] evaluates discrete harmonic extensions, layer-hitting
//!   probabilities and the closed-form variance formulas,
//! * [`observables`] turns clusters into scalar statistics and bound
//!   evaluators,
//! * [`stats`] is the small statistics toolkit (normal CDF, KS, chi-square),
//! * [`experiments`] contains the Monte Carlo drivers, and
//! * [`config`] / [`snapshot`] cover the declarative TOML configuration and
//!   the versioned cluster snapshot format.

pub mod config;
pub mod error;
pub mod experiments;
pub mod graphs;
pub mod harmonic;
pub mod idla;
pub mod observables;
pub mod snapshot;
pub mod spectral;
pub mod stats;
pub mod walk;

pub use error::{Error, Result};
