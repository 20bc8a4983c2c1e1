//! Event-triggered multi-agent PPO.
//!
//! Agents gate their own inference frequency through a dual uncertainty
//! trigger (policy entropy + twin-critic divergence), sleep for fixed
//! windows while repeating their last action, and learn with SMDP-aligned
//! advantage estimation and gradient masking so that dormant frames
//! contribute nothing to the update. The crate is self-contained: a small
//! trainable network stack with analytic gradients, two desk-scale
//! multi-agent environments, a FLOP meter, and an experiment CLI.

pub mod cli;
pub mod config;
pub mod envs;
pub mod error;
pub mod gating;
pub mod metrics;
pub mod neural;
pub mod rng;
pub mod rollout;
pub mod smdp;
pub mod trainer;

pub use error::{EtdError, Result};
