//! Simulation and safety control of the Stefan melting problem.
//!
//! The crate integrates the one- and two-phase Stefan problems with an
//! actuated boundary heat flux, evaluates the control barrier functions that
//! certify physical validity and non-overshoot of the interface, and applies
//! the non-overshooting regulators and closed-form QP safety filters built on
//! them.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cbf;
pub mod control;
pub mod error;
pub mod model;
pub mod scenario;
pub mod service;
pub mod solver;
pub mod verification;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/barriers.md")]
    mod barriers {}
    #[doc = include_str!("../../../book/src/controllers.md")]
    mod controllers {}
    #[doc = include_str!("../../../book/src/scenarios.md")]
    mod scenarios {}
    #[doc = include_str!("../../../book/src/verification.md")]
    mod verification {}
    #[doc = include_str!("../../../book/src/live.md")]
    mod live {}
}
