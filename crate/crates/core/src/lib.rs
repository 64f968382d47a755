//! Confidence intervals for one parameter of interest when the remaining
//! (nuisance) parameters satisfy a single inequality `g(θ) ≤ 0`.
//!
//! The inequality-imposed interval ([`ci::iici`]) switches endpoint by endpoint
//! between the usual interval and the equality-imposed interval, using a
//! closed-form threshold on the estimated constraint value. Companion
//! intervals (usual, equality-imposed, inequality-imposed t, likelihood-ratio
//! and its size-corrected variant), a Monte Carlo coverage lab, proof-derived
//! oracles, and OLS / IV-GMM front-ends live in the sibling modules.

pub mod canonical;
pub mod ci;
pub mod error;
pub mod estimators;
pub mod io;
pub mod lr;
pub mod mc;
pub mod model;
pub mod normal;
pub mod quadrature;
pub mod verify;

pub use ci::{CiComponents, CiKind, CiResult, Geometry};
pub use error::{Error, Result};
pub use model::{validate, EstimateSummary, LinearConstraint, Problem, SmoothConstraint};
pub use normal::{norm_cdf, norm_pdf, normal_quantile, Level};
