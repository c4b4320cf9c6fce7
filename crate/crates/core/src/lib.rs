//! Euler-scheme weak-error experiments and condition checks for SDEs
//! `dX = V0(X) dt + sqrt(2) sum_k V_k(X) o dB^k`.

pub mod catalog;
pub mod conditions;
pub mod dsl;
pub mod error;
pub mod estimators;
pub mod euler;
pub mod jet;
pub mod lamperti;
pub mod model;
pub mod noise;
pub mod numerics;
pub mod oracles;
pub mod reproduce;

pub use error::{Error, Result};

/// Seed used when none is given.
pub const DEFAULT_SEED: u64 = 0x5DE5_EED0;
