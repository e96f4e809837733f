//! Probabilistic combination models and benchmarks.

pub mod gamlss;
pub mod gbqrt;
pub mod qra;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::backtest::EnsembleForecast;
use crate::distributions::ZeroMassGaussian;
use crate::error::{Error, Result};

pub use gamlss::{fit_gamlss, GamlssCombiner, GamlssFit, GamlssOptions};
pub use gbqrt::{fit_gbqrt, GbqrtModel};
pub use qra::{fit_qra, quantile_regression, QraCombiner};

/// Scale floor relative to the mean observed load of the window.
pub const SIGMA_FLOOR_REL: f64 = 1e-6;
const SIGMA_FLOOR_ABS: f64 = 1e-12;

pub fn sigma_floor(mean_load: f64) -> f64 {
    (SIGMA_FLOOR_REL * mean_load).max(SIGMA_FLOOR_ABS)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CombinerKind {
    Ea,
    EaEv,
    Gamlss,
    Qra,
    Naive,
    Gbqrt,
}

impl CombinerKind {
    pub const ALL: [CombinerKind; 6] = [
        CombinerKind::Ea,
        CombinerKind::EaEv,
        CombinerKind::Gamlss,
        CombinerKind::Qra,
        CombinerKind::Naive,
        CombinerKind::Gbqrt,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            CombinerKind::Ea => "EA",
            CombinerKind::EaEv => "EA-EV",
            CombinerKind::Gamlss => "GAMLSS",
            CombinerKind::Qra => "QRA",
            CombinerKind::Naive => "Naive",
            CombinerKind::Gbqrt => "GBQRT",
        }
    }
}

impl fmt::Display for CombinerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CombinerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CombinerKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown probabilistic model `{s}`")))
    }
}

/// Ensemble forecasts paired with the loads they predicted.
#[derive(Debug, Clone, PartialEq)]
pub struct CombinerWindow {
    pub forecasts: Vec<EnsembleForecast>,
    pub observed: Vec<f64>,
}

impl CombinerWindow {
    pub fn new(forecasts: Vec<EnsembleForecast>, observed: Vec<f64>) -> Result<Self> {
        if forecasts.len() != observed.len() {
            return Err(Error::InvalidInput(format!(
                "{} forecasts but {} observations",
                forecasts.len(),
                observed.len()
            )));
        }
        if let Some(y) = observed.iter().find(|y| !(**y >= 0.0) || !y.is_finite()) {
            return Err(Error::InvalidInput(format!("invalid observed load {y}")));
        }
        if forecasts.windows(2).any(|w| w[0].target_hour >= w[1].target_hour) {
            return Err(Error::InvalidInput("window forecasts must be in time order".into()));
        }
        Ok(Self { forecasts, observed })
    }

    pub fn len(&self) -> usize {
        self.observed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observed.is_empty()
    }

    pub fn n_members(&self) -> usize {
        self.forecasts.first().map_or(0, |f| f.members.len())
    }

    pub fn mean_load(&self) -> f64 {
        if self.observed.is_empty() {
            return 0.0;
        }
        self.observed.iter().sum::<f64>() / self.observed.len() as f64
    }
}

/// `sum (a - b)^2 / (N - 1)`
fn residual_variance(pairs: impl Iterator<Item = (f64, f64)>, n: usize) -> Result<f64> {
    if n < 2 {
        return Err(Error::InsufficientData { required: 2, actual: n });
    }
    let ss: f64 = pairs.map(|(a, b)| (a - b).powi(2)).sum();
    Ok(ss / (n as f64 - 1.0))
}

/// Ensemble average with a constant variance from in-sample residuals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EaModel {
    pub sigma: f64,
    /// The residual variance was below the floor.
    pub floored: bool,
}

pub fn fit_ea(window: &CombinerWindow) -> Result<EaModel> {
    let var = residual_variance(
        window.observed.iter().zip(&window.forecasts).map(|(y, f)| (*y, f.ensemble_mean)),
        window.len(),
    )?;
    let floor = sigma_floor(window.mean_load());
    Ok(EaModel {
        sigma: var.sqrt().max(floor),
        floored: var.sqrt() < floor,
    })
}

impl EaModel {
    pub fn predict(&self, ens: &EnsembleForecast) -> Result<ZeroMassGaussian> {
        ZeroMassGaussian::new(ens.ensemble_mean, self.sigma)
    }
}

/// Ensemble average with the ensemble spread as scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EaEvModel {
    pub sigma_floor: f64,
}

pub fn fit_ea_ev(window: &CombinerWindow) -> Result<EaEvModel> {
    Ok(EaEvModel {
        sigma_floor: sigma_floor(window.mean_load()),
    })
}

impl EaEvModel {
    pub fn predict(&self, ens: &EnsembleForecast) -> Result<ZeroMassGaussian> {
        ZeroMassGaussian::new(ens.ensemble_mean, ens.ensemble_sd.max(self.sigma_floor))
    }
}

/// Previous-day load as mean with a constant residual variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NaiveModel {
    pub sigma: f64,
    pub floored: bool,
}

/// `pairs` holds `(y_t, y_{t-24})`.
pub fn fit_naive(pairs: &[(f64, f64)]) -> Result<NaiveModel> {
    let var = residual_variance(pairs.iter().copied(), pairs.len())?;
    let mean = pairs.iter().map(|p| p.0).sum::<f64>() / pairs.len() as f64;
    let floor = sigma_floor(mean);
    Ok(NaiveModel {
        sigma: var.sqrt().max(floor),
        floored: var.sqrt() < floor,
    })
}

impl NaiveModel {
    pub fn predict(&self, previous_day_load: f64) -> Result<ZeroMassGaussian> {
        ZeroMassGaussian::new(previous_day_load, self.sigma)
    }
}
