//! Estimates the number of signal dimensions in a data matrix by comparing
//! its scaled eigenvalues with samples from the Marchenko–Pastur noise law
//! and locating the crossover with a Bayesian change-point model.

pub mod changepoint;
pub mod error;
pub mod format;
pub mod matrix_io;
pub mod mp_law;
pub mod rank_estimator;
pub mod rmt_bounds;
pub mod seed;
pub mod sim_bench;
pub mod spectra;
pub mod stats;

pub use error::{Error, Result};
pub use matrix_io::DataMatrix;
pub use rank_estimator::{estimate_rank, RankConfig, RankDecision};
