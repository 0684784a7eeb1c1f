//! Expected optimal costs of random bipartite matching problems.
//!
//! Three variants are covered: i.i.d. edge costs ([`rbmp_i`]), points on a
//! unit-area hypersphere ([`rbmp_s`]) and points in a unit-volume L^p ball
//! ([`rbmp_b`]). [`lap`] provides the exact assignment oracle that
//! [`montecarlo`] uses to check the estimates, and [`mobility`] applies them
//! to demand pooling in ride-hailing fleets.
// `!(x > 0.0)` is how argument checks reject NaN along with out-of-range
// values; quadrature nodes and reference values keep all printed digits.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::excessive_precision)]

pub mod error;
pub mod lap;
pub mod mobility;
pub mod montecarlo;
mod orderstat;
pub mod quad;
pub mod rbmp_b;
pub mod rbmp_i;
pub mod rbmp_s;
pub mod specfun;

pub use error::{Error, Result};
pub use rbmp_i::{EstimateMode, EstimateResult, MatchingProbabilityVector, PowerLawCost, ProblemSize};
