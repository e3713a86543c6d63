//! Simulator for distributed online optimization with long-term constraints,
//! two-point bandit feedback and event-triggered communication.
//!
//! Agents on a time-varying graph each hold a decision, a dual variable and
//! the last value they broadcast. Every round they mix neighbours' broadcasts,
//! estimate subgradients from two function values, take a projected
//! primal–dual step, and rebroadcast only when their decision has drifted
//! far enough from the last broadcast.

pub mod algorithm;
pub mod config;
pub mod error;
pub mod estimator;
pub mod geometry;
pub mod harness;
pub mod metrics;
pub mod network;
pub mod problem;
pub mod rng;
pub mod schedules;

pub use error::{Error, Result};
