//! Optimal harvesting of a renewable resource whose recruitment jumps at a
//! tipping point.
//!
//! The crate builds the optimal policy by construction: the smooth saddle
//! paths of the low- and high-fecundity problems, the constrained
//! high-fecundity solution above the tipping point, the austere recovery
//! branch below it, and the endogenous (Skiba) threshold separating the two
//! basins of attraction. A hysteretic variant with a second, higher recovery
//! threshold is solved the same way. Every analytic result can be checked
//! against a brute-force value-iteration oracle ([`dp_oracle`]) and against
//! closed-loop simulation ([`trajectory`]).
//!
//! All quantitative outputs assume the power recruitment family
//! `f(x) = A * x^alpha`.

// `!(a > b)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod composite;
pub mod constrained_high;
pub mod dp_oracle;
pub mod error;
pub mod export;
pub mod hysteresis;
pub mod interp;
pub mod low_fecundity;
pub mod model;
pub mod ode;
pub mod policy;
pub mod saddle_path;
pub mod trajectory;

pub use error::{Error, Result};
pub use model::{FecundityFactor, HysteresisState, ModelParams, SteadyState};
