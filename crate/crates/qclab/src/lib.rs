//! Stochastic-gradient optimization laboratory built around quantile clipping.
//!
//! The crate provides:
//! - synthetic stochastic problems with known constants (`problems`),
//! - the quantile-clipping primitives and their closed-form bounds (`clipping`),
//! - QC-SGD, constant-clipped SGD, and vanilla SGD with full trace recording
//!   (`optimizer`),
//! - the differentially private variant DP-QC-SGD (`privacy`),
//! - evaluators for every convergence bound plus brute-force oracles
//!   (`analysis`),
//! - a config-driven runner, sweeps, and built-in verification suites
//!   (`config`, `runner`, `verify`).

pub mod analysis;
pub mod clipping;
pub mod config;
pub mod error;
pub mod optimizer;
pub mod privacy;
pub mod problems;
pub mod rng;
pub mod runner;
pub mod schedule;
pub mod trace;
pub mod vector;
pub mod verify;

pub use error::{Error, Result};
