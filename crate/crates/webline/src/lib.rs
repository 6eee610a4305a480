//! Stochastic web-line simulation and tension control.
//!
//! The crate models a driven-roller web line (tensions and roller speeds
//! under Brownian motor disturbances) and provides two receding-horizon
//! controllers on top of it:
//!
//! - a sampling-based path-integral controller ([`mppi`]) that averages
//!   parallel Monte-Carlo rollouts of the nonlinear plant with
//!   exponentially weighted costs, and works with non-differentiable
//!   cost terms such as an L1 tension penalty;
//! - a linear MPC baseline ([`lmpc`]) that relinearizes the plant and
//!   solves the condensed unconstrained quadratic tracking problem.
//!
//! The [`harness`] module ties plant and controller into a closed loop,
//! defines the two benchmark scenarios (a tension setpoint step and a
//! line speed-up), computes per-web convergence and deviation metrics,
//! and writes CSV/JSON results.
//!
//! All randomness is counter-based: every Monte-Carlo rollout and every
//! plant step draws from its own ChaCha stream keyed by `(seed, step,
//! rollout)`, so results are byte-identical regardless of how many
//! worker threads execute the rollouts.

pub mod config;
pub mod cost;
pub mod error;
pub mod harness;
pub mod line;
pub mod lmpc;
pub mod mppi;
pub mod rng;

pub use error::{Error, Result};
pub use line::{LineParams, LineState};
