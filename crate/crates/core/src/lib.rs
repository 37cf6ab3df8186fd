//! Distributed traffic state estimation on a freeway stretch.
//!
//! The macroscopic model is a discretized Aw-Rascle-Zhang (ARZ) system. A
//! two-lane car-following microsimulation provides the ground truth, which is
//! observed by roadside units and connected vehicles running an
//! information-form distributed Kalman filter with neighbour consensus.

// `!(x >= 0.0)` style checks deliberately reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod arz;
pub mod comms;
pub mod config;
pub mod dkf;
pub mod error;
pub mod experiment;
pub mod export;
pub mod ground_truth;
pub mod sensing;
pub mod units;

pub use error::{DtseError, Result};
