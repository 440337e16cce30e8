//! Histogram unfolding as regularized integer quadratic optimization.
//!
//! The crate provides the discrete folding model, three classical baseline
//! unfolders, the quadratic objective and its binary (QUBO) encoding,
//! solvers for both forms, quality metrics, and a seeded benchmark driver.

pub mod benchmark;
pub mod datagen;
pub mod error;
pub mod histogram;
pub mod laplacian;
pub mod methods;
pub mod metrics;
pub mod plot;
pub mod qubo;
pub mod result;
pub mod seed;
pub mod solvers;
pub mod unfolders;

pub use benchmark::{run_benchmark, scan_lambda, BenchmarkConfig, BenchmarkRecord, BenchmarkReport};
pub use error::{Result, UnfoldError};
pub use histogram::{fold, poisson_loglik, uniform_edges, Histogram, ResponseMatrix};
pub use laplacian::Laplacian;
pub use result::{Method, UnfoldResult};
