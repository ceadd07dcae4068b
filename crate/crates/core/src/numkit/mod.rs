//! Numeric plumbing: dense matrices, seeded random streams, the RBF kernel and
//! the PSD square root used by the convergence lab.

pub mod kernel;
pub mod linalg;
pub mod matrix;
pub mod rng;

pub use kernel::{median_heuristic, RbfKernel};
pub use linalg::psd_sqrt;
pub use matrix::Matrix;
pub use rng::RngStream;

/// A batch of points in data space, one point per row.
pub type SampleBatch = Matrix;
