//! Separation-based output feedback for nonlinear stochastic systems.
//!
//! The workflow has three stages:
//!
//! 1. [`trajopt`] optimizes an open-loop control sequence in belief space,
//!    propagating the belief with an ensemble Kalman filter ([`belief`]).
//! 2. [`sysid`] identifies a reduced-order linear time-varying model of the
//!    perturbation dynamics around that nominal from impulse responses.
//! 3. [`lqg`] designs a time-varying LQG controller on the reduced model that
//!    keeps the true system near the nominal.
//!
//! [`harness`] runs Monte Carlo evaluations, the first-order cost-variation
//! check and the complexity report; [`pipeline`] chains all of it for the
//! heat-equation benchmark in [`plant`].
//!
//! Runnable walkthroughs live in `examples/`.

pub mod belief;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod lqg;
pub mod pipeline;
pub mod plant;
pub mod rng;
pub mod sysid;
pub mod trajopt;

pub use error::{Error, Result};
