//! Distributed joint precoding and RIS phase design for cell-free downlinks.
//!
//! Every base station (BS) runs an unrolled consensus-ADMM pipeline over
//! fractional-programming surrogates of the weighted sum rate. BSs cooperate
//! by passing aggregated cross-term tables around a monodirectional ring
//! instead of raw channel state.
//!
//! Module map:
//!
//! - [`scenario`]: deployment geometry, path loss and the run configuration.
//! - [`channel`]: Saleh-Valenzuela channel synthesis and composite channels.
//! - [`objective`]: SINR, WSR, the transformed objectives and the loss.
//! - [`fp`]: closed-form auxiliary-variable and precoder updates.
//! - [`theta`]: the unit-modulus phase subproblem and its BCD solver.
//! - [`exchange`]: the ring protocol, history buffers and overhead accounting.
//! - [`pipeline`]: block orchestration, multi-worker runs and rho tuning.
//! - [`baselines`]: MRT, local ZF and centralized comparison algorithms.

pub mod baselines;
pub mod channel;
pub mod error;
pub mod exchange;
pub mod fp;
pub mod linalg;
pub mod objective;
pub mod pipeline;
pub mod rng;
pub mod scenario;
pub mod theta;

pub use error::{Error, Result};
pub use linalg::{CMat, CVec, C64};
pub use scenario::{Scenario, SystemConfig};
