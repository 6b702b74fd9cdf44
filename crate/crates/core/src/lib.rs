//! Robust preprocessing of univariate and multivariate time series.
//!
//! The crate models missing values with a lagged regression on the remainder
//! of a robust decomposition (mean and quantile targets), detects outliers by
//! feature-based Gaussian mixture clustering with a seeded outlier component,
//! and chains both into an automatic cleaning pipeline.

pub mod bench;
pub mod decompose;
pub mod error;
pub mod frame;
pub mod missing;
pub mod outlier;
pub mod pipeline;
pub mod rng;
pub mod solvers;
pub mod stats;
pub mod synthetic;

pub use error::{Error, Result};
pub use frame::{
    apply_missing_spec, load_csv, read_csv, summary, write_csv, IngestConfig, MissingSpec, Seasonalities,
    Series, SeriesFrame, TimeIndex,
};
