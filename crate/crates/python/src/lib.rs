//! Python bindings for the heatcast library.

use std::path::PathBuf;

use chrono::{Duration, NaiveDate, NaiveDateTime};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use heatcast::anomaly::{self, DetectorConfig};
use heatcast::backtest::EnsembleForecast;
use heatcast::combiners::{self, CombinerWindow, GamlssFit, GamlssOptions};
use heatcast::config::RunConfig;
use heatcast::distributions::{PredictiveDistribution, QuantileCdf, ZeroMassGaussian, ZeroMassT};
use heatcast::features::FeatureMatrix;
use heatcast::forecasters;
use heatcast::metrics;
use heatcast::pipeline::{self, RunOptions};
use heatcast::rng::substream;
use heatcast::synthetic::{self, SyntheticSpec};

fn py_err(e: heatcast::Error) -> PyErr {
    match e {
        heatcast::Error::Io { .. } | heatcast::Error::Stage { .. } => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn hour(h: usize) -> NaiveDateTime {
    NaiveDate::from_ymd_opt(2000, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap() + Duration::hours(h as i64)
}

/// Predictive distribution of a non-negative load.
#[pyclass(name = "Distribution", module = "heatcast_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyDistribution {
    inner: PredictiveDistribution,
}

#[pymethods]
impl PyDistribution {
    /// Gaussian with the negative half collapsed onto zero.
    #[staticmethod]
    fn gaussian(mu: f64, sigma: f64) -> PyResult<Self> {
        let d = ZeroMassGaussian::new(mu, sigma).map_err(py_err)?;
        Ok(Self { inner: d.into() })
    }

    /// Location-scale Student-t with the negative half collapsed onto zero.
    #[staticmethod]
    fn student_t(mu: f64, sigma: f64, nu: f64) -> PyResult<Self> {
        let d = ZeroMassT::new(mu, sigma, nu).map_err(py_err)?;
        Ok(Self { inner: d.into() })
    }

    /// Piecewise-linear CDF through the 99 percentiles.
    #[staticmethod]
    fn from_quantiles(values: Vec<f64>) -> PyResult<Self> {
        let d = QuantileCdf::from_quantiles(values).map_err(py_err)?;
        Ok(Self { inner: d.into() })
    }

    fn cdf(&self, y: f64) -> f64 {
        self.inner.cdf(y)
    }

    fn quantile(&self, tau: f64) -> PyResult<f64> {
        self.inner.quantile(tau).map_err(py_err)
    }

    fn median(&self) -> f64 {
        self.inner.median()
    }

    fn zero_mass(&self) -> f64 {
        self.inner.zero_mass()
    }

    #[pyo3(signature = (n, seed = 0))]
    fn sample(&self, n: usize, seed: u64) -> Vec<f64> {
        self.inner.sample(n, &mut substream(seed, "python/sample"))
    }

    /// CRPS of the observation `y`, estimated from `n` draws.
    #[pyo3(signature = (y, n = 1000, seed = 0))]
    fn crps(&self, y: f64, n: usize, seed: u64) -> PyResult<f64> {
        metrics::crps_sample(&self.inner, y, n, &mut substream(seed, "python/crps")).map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!("Distribution({:?})", self.inner)
    }
}

#[pyclass(name = "LassoModel", module = "heatcast_py", frozen)]
struct PyLassoModel {
    inner: forecasters::LassoModel,
}

#[pymethods]
impl PyLassoModel {
    /// Fits `(1/N) ||y - b0 - X b||^2 + lam ||b||_1` on row-major `x`.
    #[staticmethod]
    fn fit(x: Vec<Vec<f64>>, y: Vec<f64>, lam: f64) -> PyResult<Self> {
        let p = x.first().map_or(0, Vec::len);
        let names = (0..p).map(|j| format!("x{j}")).collect();
        let m = FeatureMatrix::from_rows(names, &x, y).map_err(py_err)?;
        let inner = forecasters::fit_lasso(&m, lam).map_err(py_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn intercept(&self) -> f64 {
        self.inner.intercept
    }

    #[getter]
    fn coefficients(&self) -> Vec<f64> {
        self.inner.coefficients.clone()
    }

    fn predict(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        let want = self.inner.coefficients.len();
        if let Some(r) = x.iter().find(|r| r.len() != want) {
            return Err(PyValueError::new_err(format!("expected {want} columns, got {}", r.len())));
        }
        Ok(x.iter().map(|r| self.inner.predict_row(r)).collect())
    }
}

/// Censored Student-t combiner of ensemble member forecasts.
#[pyclass(name = "GamlssModel", module = "heatcast_py", frozen)]
struct PyGamlssModel {
    inner: GamlssFit,
}

#[pymethods]
impl PyGamlssModel {
    /// `members[i]` holds the member forecasts for observation `y[i]`.
    #[staticmethod]
    fn fit(members: Vec<Vec<f64>>, y: Vec<f64>) -> PyResult<Self> {
        let forecasts = members
            .into_iter()
            .enumerate()
            .map(|(i, m)| EnsembleForecast::from_members(hour(i), m))
            .collect::<heatcast::Result<Vec<_>>>()
            .map_err(py_err)?;
        let window = CombinerWindow::new(forecasts, y).map_err(py_err)?;
        let inner = combiners::fit_gamlss(&window, &GamlssOptions::default()).map_err(py_err)?;
        Ok(Self { inner })
    }

    /// Reason the fit fell back to equal averaging, if it did.
    #[getter]
    fn fallback(&self) -> Option<String> {
        match &self.inner {
            GamlssFit::Fallback { reason, .. } => Some(reason.clone()),
            GamlssFit::Fitted(_) => None,
        }
    }

    #[getter]
    fn beta(&self) -> Option<Vec<f64>> {
        self.inner.fitted().map(|m| m.beta.clone())
    }

    #[getter]
    fn nu(&self) -> Option<f64> {
        self.inner.fitted().map(|m| m.nu)
    }

    fn predict(&self, members: Vec<f64>) -> PyResult<PyDistribution> {
        let ens = EnsembleForecast::from_members(hour(0), members).map_err(py_err)?;
        let inner = self.inner.predict(&ens).map_err(py_err)?;
        Ok(PyDistribution { inner })
    }
}

#[pyfunction]
fn crps_gaussian(mu: f64, sigma: f64, y: f64) -> f64 {
    metrics::crps_gaussian_closed(mu, sigma, y)
}

#[pyfunction]
fn crps_from_samples(mut samples: Vec<f64>, y: f64) -> f64 {
    metrics::crps_from_samples(&mut samples, y)
}

/// Returns the perturbed series and the injected positions.
#[pyfunction]
#[pyo3(signature = (values, rate = 0.05, seed = 0))]
fn inject(values: Vec<f64>, rate: f64, seed: u64) -> PyResult<(Vec<f64>, Vec<usize>)> {
    let (out, inj) = anomaly::inject(&values, rate, &mut substream(seed, "python/inject")).map_err(py_err)?;
    Ok((out, inj.positions))
}

/// Flags observations outside `[tau_lower, tau_upper]` of their predictive CDF.
#[pyfunction]
#[pyo3(signature = (distributions, observed, tau_lower, tau_upper = None))]
fn detect(
    distributions: Vec<PyRef<'_, PyDistribution>>,
    observed: Vec<f64>,
    tau_lower: f64,
    tau_upper: Option<f64>,
) -> PyResult<Vec<bool>> {
    let cfg = DetectorConfig::new(tau_lower, tau_upper.unwrap_or(1.0 - tau_lower)).map_err(py_err)?;
    let dists: Vec<PredictiveDistribution> = distributions.iter().map(|d| d.inner.clone()).collect();
    anomaly::detect(&dists, &observed, &cfg).map_err(py_err)
}

/// Synthetic buildings as dicts of `meter_id`, `timestamps`, `load` and `temperature`.
#[pyfunction]
#[pyo3(signature = (n_buildings = 1, years = 1, seed = 42))]
fn generate_synthetic<'py>(
    py: Python<'py>,
    n_buildings: usize,
    years: usize,
    seed: u64,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let spec = SyntheticSpec {
        n_buildings,
        years,
        seed,
        ..SyntheticSpec::default()
    };
    let series = synthetic::generate_synthetic(&spec).map_err(py_err)?;
    series
        .iter()
        .map(|s| {
            let d = PyDict::new(py);
            d.set_item("meter_id", s.meter_id())?;
            let pts = s.points();
            let ts: Vec<String> = pts.iter().map(|p| p.timestamp.format("%Y-%m-%d %H:%M:%S").to_string()).collect();
            d.set_item("timestamps", ts)?;
            d.set_item("load", pts.iter().map(|p| p.load).collect::<Vec<_>>())?;
            d.set_item("temperature", pts.iter().map(|p| p.temperature).collect::<Vec<_>>())?;
            Ok(d)
        })
        .collect()
}

/// Runs every stage for a TOML config and returns the run summary as a dict.
#[pyfunction]
#[pyo3(signature = (config_path, output_dir = None, max_test_days = None))]
fn run_pipeline<'py>(
    py: Python<'py>,
    config_path: PathBuf,
    output_dir: Option<PathBuf>,
    max_test_days: Option<usize>,
) -> PyResult<Bound<'py, PyAny>> {
    let mut cfg = RunConfig::load(&config_path).map_err(py_err)?;
    if let Some(d) = output_dir {
        cfg.output_dir = d;
    }
    if let Some(n) = max_test_days {
        cfg.runtime.max_test_days = n;
    }
    cfg.validate().map_err(py_err)?;
    let (summary, _) = py
        .detach(|| pipeline::run_pipeline(&cfg, RunOptions::default()))
        .map_err(py_err)?;
    let json = serde_json::to_string(&summary).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (json,))
}

#[pymodule]
fn heatcast_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDistribution>()?;
    m.add_class::<PyLassoModel>()?;
    m.add_class::<PyGamlssModel>()?;
    m.add_function(wrap_pyfunction!(crps_gaussian, m)?)?;
    m.add_function(wrap_pyfunction!(crps_from_samples, m)?)?;
    m.add_function(wrap_pyfunction!(inject, m)?)?;
    m.add_function(wrap_pyfunction!(detect, m)?)?;
    m.add_function(wrap_pyfunction!(generate_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
