//! Subset selection and diversity measurement for vector-represented datasets.
//!
//! The crate builds quality-weighted DPP kernels over feature matrices, runs
//! greedy MAP inference with incremental Cholesky updates, measures dataset
//! diversity as a log determinant distance against a random hypersphere
//! reference, and sketches per-layer weight gradients into fixed-size
//! feature vectors with two chained Johnson-Lindenstrauss transforms.
//!
//! Module map:
//!
//! - [`features`]: feature matrices, score tables, synthetic data, DSF1 files
//! - [`kernels`]: RBF / inner-product kernels and the quality-weighted kernel
//! - [`dpp`]: greedy MAP inference, brute-force oracle, direct log-determinants
//! - [`diversity`]: log determinant distance and its per-step curves
//! - [`sketch`]: row-wise Gaussian projection + sparse JL, DGF1 gradient files
//! - [`toymodel`]: a one-layer softmax model producing real gradients and scores
//! - [`select`]: DPP, random, rank-and-select and dedup strategies

pub mod diversity;
pub mod dpp;
mod error;
pub mod features;
pub mod kernels;
pub mod linalg;
pub mod rng;
pub mod select;
pub mod sketch;
pub mod toymodel;

pub use error::{Error, Result};
