//! Deterministic multi-cell downlink load-balancing laboratory.
//!
//! The crate is `no_std` (with `alloc`) and holds everything that is pure
//! computation: the radio model, traffic sources and queues, the per-TTI
//! MAC scheduler, A3 / utilization-triggered handover, the TTI-level
//! simulator, KPI aggregation, a from-scratch clipped double Q-learning
//! agent, and the environment facade that ties the agent to the simulator.
//!
//! File formats, configuration parsing and the experiment driver live in
//! the `mlb-lab` crate.
#![cfg_attr(not(any(test, feature = "std")), no_std)]

extern crate alloc;

pub mod agent;
pub mod env;
pub mod error;
pub mod handover;
pub mod metrics;
pub mod nn;
pub mod radio;
pub mod rng;
pub mod scheduler;
pub mod sim;
pub mod traffic;

pub use error::{Error, Result};
