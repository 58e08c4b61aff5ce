//! Path-choice estimation for schedule-based metro networks from smart-card
//! (AFC) entry/exit records.
//!
//! The library estimates time-dependent route-choice coefficients and path
//! shares by iterating three sub-problems to a fixed point:
//!
//! 1. a capacity-constrained event-based network loading simulator that turns
//!    choice coefficients into delay rates ([`sim`]),
//! 2. a convex quadratic program over path shares with the delay rates held
//!    fixed, constrained by Monte-Carlo-derived linear constraints ([`qp`],
//!    [`alc`]),
//! 3. a weighted fractional-logit correction that maps rough shares back to
//!    choice coefficients ([`clogit`]).
//!
//! The [`estimator`] module drives the fixed-point loop; [`synth`] generates
//! synthetic AFC data from known coefficients for closed-loop validation.

pub mod alc;
pub mod clogit;
pub mod domain;
pub mod error;
pub mod estimator;
pub mod qp;
pub mod rng;
pub mod sim;
pub mod synth;

pub use error::{Error, Result};
