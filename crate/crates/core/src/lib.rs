//! Desk-scale car-following laboratory.
//!
//! A longitudinal leader/follower simulator, a from-scratch DDPG learner with
//! separate simulation and practical (recorded human) replay buffers, dataset
//! relabeling, IDM and behavior-cloning baselines, an inverse pedal-control
//! network and a time-to-collision evaluation harness.
//!
//! The runnable programs under `examples/` walk through each capability; the
//! `followrl` binary exposes the same pieces as subcommands.

pub mod baselines;
pub mod config;
pub mod control;
pub mod datasets;
pub mod ddpg;
pub mod error;
pub mod eval;
pub mod neural;
pub mod reward;
pub mod sim;
pub mod workflow;

pub use error::{Error, Result};
