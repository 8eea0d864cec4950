//! Sample-and-hold stabilization with a CLF-constrained actor-critic
//! controller.
//!
//! The crate provides the controlled dynamics and integrators, the CLF pair
//! and its bounds pipeline, the linear critic, the nominal lookahead policy,
//! the per-step actor-critic optimizer and a closed-loop simulator with
//! runtime stability monitors.

pub mod actor_critic;
pub mod bounds;
pub mod clf;
pub mod config;
pub mod critic;
pub mod dynamics;
pub mod envelope;
pub mod error;
pub mod grid;
pub mod nominal;
pub mod simulator;

pub use error::{Error, Result};
