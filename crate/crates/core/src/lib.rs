//! Kernel Stein discrepancy goodness-of-fit testing for unnormalized models.
//!
//! The pipeline is: a [`models::ScoreModel`] and a [`kernels::TiltedKernel`]
//! define the Stein kernel; [`stein::stein_gram`] materializes it on a
//! [`data::DataSet`]; [`hypothesis`] turns the Gram into a decision using the
//! bootstrap in [`bootstrap`] and a radius from [`radius`]. [`contam`] and
//! [`harness`] generate contaminated data and run seeded experiment sweeps.

pub mod bootstrap;
pub mod contam;
pub mod data;
pub mod error;
pub mod harness;
pub mod hypothesis;
pub mod kernels;
pub mod models;
pub mod radius;
pub mod rng;
pub mod stein;

pub use data::DataSet;
pub use error::{Error, Result};
pub use kernels::{BaseKernel, TiltedKernel, Weight};
pub use models::ScoreModel;

/// Library version string written into every output record.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
