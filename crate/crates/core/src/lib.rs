pub mod anomaly;
pub mod backtest;
pub mod bspline;
pub mod combiners;
pub mod config;
pub mod distributions;
pub mod error;
pub mod features;
pub mod forecasters;
pub mod metrics;
pub mod optim;
pub mod pipeline;
pub mod rng;
pub mod special;
pub mod synthetic;
pub mod timeseries;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
