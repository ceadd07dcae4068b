//! Joint training of an energy-based density estimator and an implicit
//! generator coupled through Stein discrepancies, with a laboratory for the
//! underlying optimization dynamics and a synthetic benchmark suite.

pub mod autodiff;
pub mod convlab;
pub mod discrepancy;
pub mod error;
pub mod metrics;
pub mod models;
pub mod numkit;
pub mod synthdata;
pub mod trainer;

pub use error::{Error, Result};
