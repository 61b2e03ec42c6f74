//! Stratified Monte Carlo estimation of `I = E f(X)`.
//!
//! Latent samples are drawn from equiprobable strata of a multivariate
//! standard Gaussian, pushed through a transport map (identity, an exact
//! testbed map, or a trained coupling flow) and combined per stratum with
//! proportional or optimal (Neyman) allocation.
//!
//! Module overview:
//!
//! - [`numerics`]: normal and chi-squared distribution functions, quadrature,
//!   bracketing root finder, goodness-of-fit helpers.
//! - [`sampling`]: seeded substreams and primitive samplers.
//! - [`strata`]: cartesian, spherical, radial and selected-coordinate schemes.
//! - [`estimate`]: CMC and stratified estimators, allocations, intervals.
//! - [`flow`]: transport maps and coupling-flow training.
//! - [`baselines`]: Gaussian mixture baseline fitted by EM.
//! - [`testbeds`]: example distributions, target functions, CSV ingestion.
//! - [`harness`]: config-driven experiment runners used by the CLI.

pub mod baselines;
pub mod error;
pub mod estimate;
pub mod flow;
pub mod harness;
pub mod numerics;
pub mod sampling;
pub mod strata;
pub mod testbeds;

pub use baselines::GmmModel;
pub use error::{Error, Result};
pub use estimate::{Allocation, EstimateReport, Method, StratumStats};
pub use flow::{TrainConfig, TransportMap};
pub use sampling::{RngStream, Streams};
pub use strata::{StrataScheme, StratumId};
pub use testbeds::{TargetFunction, Testbed};
