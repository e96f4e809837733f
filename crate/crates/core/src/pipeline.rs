//! End-to-end runs: tune, forecast, combine, evaluate, detect, report.
//!
//! Stage results that are expensive to recompute are checkpointed under
//! `checkpoints/<config hash>/`, so a rerun of the same configuration picks
//! up where the previous one stopped.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use chrono::{Duration, NaiveDate, NaiveDateTime};
use log::info;
use rand::RngCore;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::anomaly::{run_experiment, write_runs_csv, ExperimentResult, ExperimentSpec};
use crate::backtest::{
    assemble_ensemble, grid_search_tune, member_order, rolling_day_ahead, write_forecast_csv, BacktestInput,
    EnsembleForecast, PointForecasts, TuningOutcome,
};
use crate::combiners::{
    fit_ea, fit_ea_ev, fit_gamlss, fit_gbqrt, fit_naive, fit_qra, CombinerKind, CombinerWindow, GamlssFit,
};
use crate::config::RunConfig;
use crate::distributions::{quantile_levels, PredictiveDistribution};
use crate::error::{Error, Result};
use crate::features::{FeatureSet, WorkCalendar};
use crate::forecasters::{ForecasterId, Hyperparameter, Method};
use crate::metrics::{crps_sample, mae, pit, rmse, PitHistogram, RocCurve, RocPoint};
use crate::rng::substream;
use crate::synthetic::generate_synthetic;
use crate::timeseries::{fmt_ts, ingest_csv, LoadSeries};

/// Retained days behind each quantile-boosting fit.
pub const GBQRT_WINDOW_DAYS: usize = 365;

/// Label of the cross-building average rows.
pub const ALL_BUILDINGS: &str = "all";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Data,
    Tune,
    Forecast,
    Combine,
    Evaluate,
    Detect,
    Report,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Data => "data",
            Stage::Tune => "tune",
            Stage::Forecast => "forecast",
            Stage::Combine => "combine",
            Stage::Evaluate => "evaluate",
            Stage::Detect => "detect",
            Stage::Report => "report",
        }
    }
}

pub fn load_buildings(cfg: &RunConfig) -> Result<Vec<LoadSeries>> {
    let series = match &cfg.data.synthetic {
        Some(spec) => generate_synthetic(spec)?,
        None => cfg
            .data
            .inputs
            .iter()
            .map(|p| ingest_csv(p, &cfg.data.schema))
            .collect::<Result<Vec<_>>>()?,
    };
    let mut seen = BTreeSet::new();
    for s in &series {
        if !seen.insert(s.meter_id()) {
            return Err(Error::Config(format!("meter id `{}` appears twice", s.meter_id())));
        }
    }
    Ok(series)
}

pub fn work_calendar(cfg: &RunConfig) -> WorkCalendar {
    WorkCalendar {
        holidays: cfg.data.holidays.iter().copied().collect(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Spans {
    pub validation: Vec<NaiveDate>,
    pub test: Vec<NaiveDate>,
}

pub fn spans(input: &BacktestInput, cfg: &RunConfig) -> Result<Spans> {
    let s = &cfg.splits;
    let validation = input.days_between(s.validation.start, s.validation.end);
    let mut test = input.days_between(s.test.start, s.test.end);
    if cfg.runtime.max_test_days > 0 {
        test.truncate(cfg.runtime.max_test_days);
    }
    if validation.is_empty() || test.is_empty() {
        return Err(Error::Config(format!(
            "{}: the validation and test spans need heating-period days in the data",
            input.series().meter_id()
        )));
    }
    Ok(Spans { validation, test })
}

/// Grid search per ensemble member on every `tune_stride_days`-th validation day.
pub fn tune_building(input: &BacktestInput, cfg: &RunConfig) -> Result<Vec<TuningOutcome>> {
    let days: Vec<NaiveDate> = spans(input, cfg)?
        .validation
        .into_iter()
        .step_by(cfg.runtime.tune_stride_days)
        .collect();
    member_order()
        .into_iter()
        .map(|id| {
            let grid = cfg.grids.grid(id.method)?;
            let outcome = grid_search_tune(input, id, &grid, &days, 1)?;
            info!("{}: {id} tuned to {}", input.series().meter_id(), outcome.best);
            Ok(outcome)
        })
        .collect()
}

/// Member forecasts over the validation and test days with frozen hyperparameters.
pub fn forecast_building(input: &BacktestInput, cfg: &RunConfig, tuned: &[TuningOutcome]) -> Result<Vec<PointForecasts>> {
    let s = spans(input, cfg)?;
    let days = [s.validation, s.test].concat();
    let order = member_order();
    if tuned.iter().map(|t| t.id).ne(order.iter().copied()) {
        return Err(Error::InvalidInput("tuning results are not in member order".into()));
    }
    tuned
        .iter()
        .map(|t| rolling_day_ahead(input, t.id, t.best, &days, cfg.runtime.retrain_every_days))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitStatus {
    Fitted,
    /// Variance below the floor.
    Floored,
    /// GAMLSS did not converge; the day uses EA.
    Fallback,
    /// Too little history; no predictions for the refit period.
    Skipped,
}

impl FitStatus {
    pub fn name(self) -> &'static str {
        match self {
            FitStatus::Fitted => "fitted",
            FitStatus::Floored => "floored",
            FitStatus::Fallback => "fallback",
            FitStatus::Skipped => "skipped",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub fit_day: NaiveDate,
    pub model: CombinerKind,
    /// Training pairs (rows for quantile boosting).
    pub window: usize,
    pub status: FitStatus,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelPredictions {
    pub model: CombinerKind,
    pub hours: Vec<NaiveDateTime>,
    pub distributions: Vec<PredictiveDistribution>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombineOutput {
    pub predictions: Vec<ModelPredictions>,
    pub fits: Vec<FitRecord>,
}

#[derive(Default)]
struct ChunkOutput {
    preds: BTreeMap<CombinerKind, Vec<(NaiveDateTime, PredictiveDistribution)>>,
    fits: Vec<FitRecord>,
}

impl ChunkOutput {
    fn add(&mut self, record: FitRecord, preds: Vec<(NaiveDateTime, PredictiveDistribution)>) {
        self.preds.entry(record.model).or_default().extend(preds);
        self.fits.push(record);
    }
}

fn midnight(d: NaiveDate) -> NaiveDateTime {
    d.and_hms_opt(0, 0, 0).expect("midnight exists")
}

/// Insufficient history is not an error for a single refit.
fn usable<T>(r: Result<T>) -> Result<std::result::Result<T, String>> {
    match r {
        Ok(v) => Ok(Ok(v)),
        Err(e @ Error::InsufficientData { .. }) => Ok(Err(e.to_string())),
        Err(e) => Err(e),
    }
}

fn predict_each(
    targets: &[EnsembleForecast],
    f: impl Fn(&EnsembleForecast) -> Result<PredictiveDistribution>,
) -> Result<Vec<(NaiveDateTime, PredictiveDistribution)>> {
    targets.iter().map(|e| Ok((e.target_hour, f(e)?))).collect()
}

struct ChunkContext<'a> {
    input: &'a BacktestInput<'a>,
    cfg: &'a RunConfig,
    /// Ensemble forecasts with an observation, in time order.
    history: &'a [(&'a EnsembleForecast, f64)],
    ensemble: &'a [EnsembleForecast],
}

fn combine_chunk(ctx: &ChunkContext, chunk: &[NaiveDate], kinds: &[CombinerKind]) -> Result<ChunkOutput> {
    let series = ctx.input.series();
    let fit_day = chunk[0];
    let end = midnight(fit_day);
    let start = end - Duration::days(ctx.cfg.runtime.combiner_window_days as i64);
    let lo = ctx.history.partition_point(|(e, _)| e.target_hour < start);
    let hi = ctx.history.partition_point(|(e, _)| e.target_hour < end);
    let past = &ctx.history[lo..hi];
    let window = CombinerWindow::new(
        past.iter().map(|(e, _)| (*e).clone()).collect(),
        past.iter().map(|(_, y)| *y).collect(),
    )?;
    let chunk_end = midnight(*chunk.last().expect("nonempty chunk")) + Duration::days(1);
    let a = ctx.ensemble.partition_point(|e| e.target_hour < end);
    let b = ctx.ensemble.partition_point(|e| e.target_hour < chunk_end);
    let targets = &ctx.ensemble[a..b];
    let previous = |ts: NaiveDateTime| {
        series
            .position(ts)
            .and_then(|i| series.lagged(i, 24))
            .and_then(|i| series.load(i))
    };

    let mut out = ChunkOutput::default();
    for &model in kinds {
        let record = |status, detail: String| FitRecord {
            fit_day,
            model,
            window: window.len(),
            status,
            detail,
        };
        let skipped = |msg: String| (record(FitStatus::Skipped, msg), Vec::new());
        let (rec, preds) = match model {
            CombinerKind::Ea => match usable(fit_ea(&window))? {
                Ok(m) => {
                    let status = if m.floored { FitStatus::Floored } else { FitStatus::Fitted };
                    let p = predict_each(targets, |e| Ok(m.predict(e)?.into()))?;
                    (record(status, format!("sigma={}", m.sigma)), p)
                }
                Err(msg) => skipped(msg),
            },
            CombinerKind::EaEv => match usable(fit_ea_ev(&window))? {
                Ok(m) => {
                    let p = predict_each(targets, |e| Ok(m.predict(e)?.into()))?;
                    (record(FitStatus::Fitted, format!("sigma_floor={}", m.sigma_floor)), p)
                }
                Err(msg) => skipped(msg),
            },
            CombinerKind::Gamlss => match usable(fit_gamlss(&window, &ctx.cfg.gamlss))? {
                Ok(fit) => {
                    let p = predict_each(targets, |e| fit.predict(e))?;
                    match &fit {
                        GamlssFit::Fitted(m) => (
                            record(
                                FitStatus::Fitted,
                                format!("nu={} iterations={} loglik={}", m.nu, m.iterations, m.log_likelihood),
                            ),
                            p,
                        ),
                        GamlssFit::Fallback { reason, .. } => (record(FitStatus::Fallback, reason.clone()), p),
                    }
                }
                Err(msg) => skipped(msg),
            },
            CombinerKind::Qra => match usable(fit_qra(&window))? {
                Ok(m) => {
                    let p = predict_each(targets, |e| Ok(m.predict(e)?.into()))?;
                    (record(FitStatus::Fitted, String::new()), p)
                }
                Err(msg) => skipped(msg),
            },
            CombinerKind::Naive => {
                let pairs: Vec<(f64, f64)> = past
                    .iter()
                    .filter_map(|(e, y)| previous(e.target_hour).map(|p| (*y, p)))
                    .collect();
                match usable(fit_naive(&pairs))? {
                    Ok(m) => {
                        let mut p = Vec::new();
                        for &d in chunk {
                            for t in ctx.input.day_hours(d).expect("retained day") {
                                let ts = series.timestamp(t);
                                if let Some(prev) = previous(ts) {
                                    p.push((ts, m.predict(prev)?.into()));
                                }
                            }
                        }
                        let status = if m.floored { FitStatus::Floored } else { FitStatus::Fitted };
                        (
                            FitRecord {
                                window: pairs.len(),
                                ..record(status, format!("sigma={}", m.sigma))
                            },
                            p,
                        )
                    }
                    Err(msg) => skipped(msg),
                }
            }
            CombinerKind::Gbqrt => unreachable!("quantile boosting is fitted separately"),
        };
        out.add(rec, preds);
    }
    Ok(out)
}

fn gbqrt_chunk(input: &BacktestInput, chunk: &[NaiveDate], depth: usize) -> Result<ChunkOutput> {
    let fit_day = chunk[0];
    let mut out = ChunkOutput::default();
    let Some(x) = input.training_matrix(FeatureSet::Gbr, GBQRT_WINDOW_DAYS, fit_day)? else {
        let rec = FitRecord {
            fit_day,
            model: CombinerKind::Gbqrt,
            window: 0,
            status: FitStatus::Skipped,
            detail: "too few usable training rows".into(),
        };
        out.add(rec, Vec::new());
        return Ok(out);
    };
    let model = fit_gbqrt(&x, depth)?;
    let mut preds = Vec::new();
    for &d in chunk {
        let (idx, rows) = input.day_matrix(FeatureSet::Gbr, d)?;
        for (t, q) in idx.into_iter().zip(model.predict(&rows)?) {
            preds.push((input.series().timestamp(t), q.into()));
        }
    }
    let rec = FitRecord {
        fit_day,
        model: CombinerKind::Gbqrt,
        window: x.n_rows(),
        status: FitStatus::Fitted,
        detail: format!("depth={depth}"),
    };
    out.add(rec, preds);
    Ok(out)
}

/// Depth chosen for GBR-365, inherited by quantile boosting.
pub fn gbqrt_depth(tuned: &[TuningOutcome]) -> Result<usize> {
    let id = ForecasterId::new(Method::Gbr, GBQRT_WINDOW_DAYS);
    match tuned.iter().find(|t| t.id == id).map(|t| t.best) {
        Some(Hyperparameter::Depth(d)) => Ok(d),
        _ => Err(Error::InvalidInput(format!("no tuned depth for {id}"))),
    }
}

/// Predictive distributions for every test hour, refitting each model on the
/// trailing window every `combiner_refit_days` (`gbqrt_refit_days`) test days.
pub fn combine_building(
    input: &BacktestInput,
    cfg: &RunConfig,
    ensemble: &[EnsembleForecast],
    tuned: &[TuningOutcome],
) -> Result<CombineOutput> {
    let kinds = cfg.model_kinds()?;
    let test = spans(input, cfg)?.test;
    let series = input.series();
    let history: Vec<(&EnsembleForecast, f64)> = ensemble
        .iter()
        .filter_map(|e| series.position(e.target_hour).and_then(|i| series.load(i)).map(|y| (e, y)))
        .collect();
    let ctx = ChunkContext {
        input,
        cfg,
        history: &history,
        ensemble,
    };
    let ens_kinds: Vec<CombinerKind> = kinds.iter().copied().filter(|k| *k != CombinerKind::Gbqrt).collect();
    let mut parts: Vec<ChunkOutput> = Vec::new();
    if !ens_kinds.is_empty() {
        let chunks: Vec<&[NaiveDate]> = test.chunks(cfg.runtime.combiner_refit_days).collect();
        parts = chunks
            .par_iter()
            .map(|c| combine_chunk(&ctx, c, &ens_kinds))
            .collect::<Result<Vec<_>>>()?;
    }
    if kinds.contains(&CombinerKind::Gbqrt) {
        let depth = gbqrt_depth(tuned)?;
        for c in test.chunks(cfg.runtime.gbqrt_refit_days) {
            parts.push(gbqrt_chunk(input, c, depth)?);
        }
    }
    let mut fits: Vec<FitRecord> = Vec::new();
    let mut merged: BTreeMap<CombinerKind, Vec<(NaiveDateTime, PredictiveDistribution)>> = BTreeMap::new();
    for p in parts {
        fits.extend(p.fits);
        for (k, v) in p.preds {
            merged.entry(k).or_default().extend(v);
        }
    }
    fits.sort_by(|a, b| a.fit_day.cmp(&b.fit_day).then(a.model.cmp(&b.model)));
    let predictions = kinds
        .iter()
        .map(|&model| {
            let (hours, distributions) = merged.remove(&model).unwrap_or_default().into_iter().unzip();
            ModelPredictions {
                model,
                hours,
                distributions,
            }
        })
        .collect();
    Ok(CombineOutput { predictions, fits })
}

/// Test hours where every model has a distribution and the load is observed.
#[derive(Debug, Clone, PartialEq)]
pub struct Aligned {
    pub hours: Vec<NaiveDateTime>,
    pub observed: Vec<f64>,
    pub models: Vec<(CombinerKind, Vec<PredictiveDistribution>)>,
}

pub fn align(series: &LoadSeries, predictions: &[ModelPredictions]) -> Result<Aligned> {
    let Some(first) = predictions.first() else {
        return Err(Error::InvalidInput("no model predictions".into()));
    };
    let mut common: BTreeSet<NaiveDateTime> = first.hours.iter().copied().collect();
    for p in &predictions[1..] {
        let hs: BTreeSet<NaiveDateTime> = p.hours.iter().copied().collect();
        common = common.intersection(&hs).copied().collect();
    }
    let mut hours = Vec::new();
    let mut observed = Vec::new();
    for ts in common {
        if let Some(y) = series.position(ts).and_then(|i| series.load(i)) {
            hours.push(ts);
            observed.push(y);
        }
    }
    if hours.is_empty() {
        return Err(Error::InsufficientData { required: 1, actual: 0 });
    }
    let models = predictions
        .iter()
        .map(|p| {
            let d = hours
                .iter()
                .map(|ts| {
                    let k = p.hours.binary_search(ts).expect("hour is common to all models");
                    p.distributions[k].clone()
                })
                .collect();
            (p.model, d)
        })
        .collect();
    Ok(Aligned { hours, observed, models })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointRow {
    pub building: String,
    pub forecaster: String,
    pub mae: f64,
    pub rmse: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrpsRow {
    pub building: String,
    pub model: CombinerKind,
    pub crps: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PitRow {
    pub building: String,
    pub model: CombinerKind,
    pub histogram: PitHistogram,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocRow {
    pub building: String,
    pub model: CombinerKind,
    pub curve: RocCurve,
}

pub const ENSEMBLE_MEAN: &str = "ensemble_mean";

/// MAE and RMSE of each member and the ensemble mean over observed test hours.
pub fn point_metrics(building: &str, series: &LoadSeries, ensemble: &[EnsembleForecast], test: &[NaiveDate]) -> Result<Vec<PointRow>> {
    let test: BTreeSet<NaiveDate> = test.iter().copied().collect();
    let rows: Vec<(&EnsembleForecast, f64)> = ensemble
        .iter()
        .filter(|e| test.contains(&e.target_hour.date()))
        .filter_map(|e| series.position(e.target_hour).and_then(|i| series.load(i)).map(|y| (e, y)))
        .collect();
    let y: Vec<f64> = rows.iter().map(|(_, y)| *y).collect();
    let mut columns: Vec<(String, Vec<f64>)> = member_order()
        .iter()
        .enumerate()
        .map(|(m, id)| (id.label(), rows.iter().map(|(e, _)| e.members[m]).collect()))
        .collect();
    columns.push((ENSEMBLE_MEAN.into(), rows.iter().map(|(e, _)| e.ensemble_mean).collect()));
    columns
        .into_iter()
        .map(|(forecaster, yhat)| {
            Ok(PointRow {
                building: building.into(),
                forecaster,
                mae: mae(&y, &yhat)?,
                rmse: rmse(&y, &yhat)?,
                n: y.len(),
            })
        })
        .collect()
}

/// Sample CRPS and randomized PIT per model, each from its own substream.
pub fn score_models(building: &str, aligned: &Aligned, cfg: &RunConfig) -> Result<Vec<(CrpsRow, PitRow)>> {
    aligned
        .models
        .par_iter()
        .map(|(model, dists)| {
            let mut rng = substream(cfg.master_seed, &format!("crps/{building}/{model}"));
            let mut total = 0.0;
            for (d, &y) in dists.iter().zip(&aligned.observed) {
                total += crps_sample(d, y, cfg.runtime.crps_samples, &mut rng)?;
            }
            let mut rng = substream(cfg.master_seed, &format!("pit/{building}/{model}"));
            let values = dists
                .iter()
                .zip(&aligned.observed)
                .map(|(d, &y)| pit(d, y, &mut rng))
                .collect::<Result<Vec<_>>>()?;
            let n = dists.len();
            Ok((
                CrpsRow {
                    building: building.into(),
                    model: *model,
                    crps: total / n as f64,
                    n,
                },
                PitRow {
                    building: building.into(),
                    model: *model,
                    histogram: PitHistogram::from_values(&values)?,
                },
            ))
        })
        .collect()
}

/// The injection experiment for every model. All models of a building see
/// the same injected anomalies.
pub fn detect_building(building: &str, aligned: &Aligned, cfg: &RunConfig) -> Result<Vec<(CombinerKind, ExperimentResult)>> {
    let spec = ExperimentSpec {
        runs: cfg.experiment.runs,
        rate: cfg.experiment.rate,
        sweep: cfg.experiment.sweep.clone(),
        seed: substream(cfg.master_seed, &format!("detect/{building}")).next_u64(),
    };
    aligned
        .models
        .iter()
        .map(|(model, dists)| Ok((*model, run_experiment(dists, &aligned.observed, &spec)?)))
        .collect()
}

/// Pointwise mean of curves that share thresholds.
pub fn average_curves(curves: &[&RocCurve]) -> Result<RocCurve> {
    let Some(first) = curves.first() else {
        return Err(Error::InvalidInput("no curves to average".into()));
    };
    let n = curves.len() as f64;
    let points = first
        .points
        .iter()
        .enumerate()
        .map(|(j, p)| {
            let (tpr, fpr) = curves.iter().fold((0.0, 0.0), |(a, b), c| (a + c.points[j].tpr, b + c.points[j].fpr));
            RocPoint {
                tau_lower: p.tau_lower,
                tpr: tpr / n,
                fpr: fpr / n,
            }
        })
        .collect();
    Ok(RocCurve { points })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config_hash: String,
    pub master_seed: u64,
    pub tuning: Vec<(String, TuningOutcome)>,
    pub fits: Vec<(String, FitRecord)>,
    /// Per building, then the cross-building means under [`ALL_BUILDINGS`].
    pub point: Vec<PointRow>,
    pub crps: Vec<CrpsRow>,
    pub pit: Vec<PitRow>,
    pub roc: Vec<RocRow>,
}

impl RunSummary {
    pub fn point_row(&self, building: &str, forecaster: &str) -> Option<&PointRow> {
        self.point.iter().find(|r| r.building == building && r.forecaster == forecaster)
    }

    pub fn crps_of(&self, building: &str, model: CombinerKind) -> Option<f64> {
        self.crps.iter().find(|r| r.building == building && r.model == model).map(|r| r.crps)
    }

    pub fn roc_of(&self, building: &str, model: CombinerKind) -> Option<&RocCurve> {
        self.roc.iter().find(|r| r.building == building && r.model == model).map(|r| &r.curve)
    }

    /// Share of GAMLSS refits that fell back to EA.
    pub fn gamlss_fallback_rate(&self) -> Option<f64> {
        let g: Vec<_> = self.fits.iter().filter(|(_, f)| f.model == CombinerKind::Gamlss).collect();
        if g.is_empty() {
            return None;
        }
        Some(g.iter().filter(|(_, f)| f.status == FitStatus::Fallback).count() as f64 / g.len() as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Complete,
    Incomplete,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub master_seed: u64,
    pub status: RunStatus,
    pub stages_completed: Vec<Stage>,
    pub failed_stage: Option<Stage>,
    pub error: Option<String>,
    pub artifacts: Vec<Artifact>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    /// Last stage to execute.
    pub through: Stage,
    /// Fail instead of computing a missing checkpoint.
    pub checkpoints_only: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            through: Stage::Report,
            checkpoints_only: false,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Checkpoint<T> {
    config_hash: String,
    master_seed: u64,
    stage: Stage,
    building: String,
    data: T,
}

struct Runner<'c> {
    cfg: &'c RunConfig,
    opts: RunOptions,
    hash: String,
    out: PathBuf,
    checkpoints: PathBuf,
    artifacts: BTreeMap<String, Artifact>,
    completed: Vec<Stage>,
    current: Stage,
}

fn csv_bytes(comments: &[String], header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    for c in comments {
        writeln!(buf, "# {c}").map_err(|e| Error::io("csv buffer", e))?;
    }
    let mut w = csv::Writer::from_writer(buf);
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.into_inner().map_err(|e| Error::io("csv buffer", e.into_error()))
}

fn file_safe(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

impl<'c> Runner<'c> {
    fn new(cfg: &'c RunConfig, opts: RunOptions) -> Result<Self> {
        let hash = cfg.hash();
        let out = cfg.output_dir.clone();
        let checkpoints = out.join("checkpoints").join(&hash);
        fs::create_dir_all(&checkpoints).map_err(|e| Error::io(&checkpoints, e))?;
        Ok(Self {
            cfg,
            opts,
            hash,
            out,
            checkpoints,
            artifacts: BTreeMap::new(),
            completed: Vec::new(),
            current: Stage::Data,
        })
    }

    fn comments(&self) -> Vec<String> {
        vec![format!("config_hash={} master_seed={}", self.hash, self.cfg.master_seed)]
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.out.join(name);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.artifacts.insert(
            name.to_string(),
            Artifact {
                path: name.to_string(),
                sha256: hex::encode(Sha256::digest(bytes)),
                bytes: bytes.len(),
            },
        );
        Ok(())
    }

    fn checkpoint<T: Serialize + DeserializeOwned>(
        &self,
        stage: Stage,
        building: &str,
        compute: impl FnOnce() -> Result<T>,
    ) -> Result<T> {
        let path = self.checkpoints.join(format!("{}_{}.json", stage.name(), file_safe(building)));
        if let Ok(text) = fs::read(&path) {
            match serde_json::from_slice::<Checkpoint<T>>(&text) {
                Ok(c) if c.config_hash == self.hash && c.stage == stage && c.building == building => {
                    info!("reusing {}", path.display());
                    return Ok(c.data);
                }
                _ => info!("ignoring stale checkpoint {}", path.display()),
            }
        }
        if self.opts.checkpoints_only {
            return Err(Error::Config(format!(
                "no {} checkpoint for {building}; run the earlier stages first",
                stage.name()
            )));
        }
        let data = compute()?;
        let c = Checkpoint {
            config_hash: self.hash.clone(),
            master_seed: self.cfg.master_seed,
            stage,
            building: building.to_string(),
            data,
        };
        let tmp = path.with_extension("json.tmp");
        let bytes = serde_json::to_vec(&c)?;
        fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
        Ok(c.data)
    }

    fn begin(&mut self, stage: Stage) {
        info!("stage {}", stage.name());
        self.current = stage;
    }

    fn done(&mut self, stage: Stage) -> bool {
        self.completed.push(stage);
        stage >= self.opts.through
    }

    fn execute(&mut self, summary: &mut RunSummary) -> Result<()> {
        let cfg = self.cfg;
        summary.config_hash = self.hash.clone();
        summary.master_seed = cfg.master_seed;

        self.begin(Stage::Data);
        let buildings = load_buildings(cfg)?;
        let heating = cfg.heating.spec()?;
        let inputs = buildings
            .iter()
            .map(|s| BacktestInput::new(s, work_calendar(cfg), &heating))
            .collect::<Result<Vec<_>>>()?;
        let mut resolved = cfg.clone();
        resolved.output_dir = PathBuf::from(".");
        self.write("config.toml", resolved.to_toml()?.as_bytes())?;
        if self.done(Stage::Data) {
            return Ok(());
        }

        self.begin(Stage::Tune);
        let mut tuned = Vec::new();
        for input in &inputs {
            let id = input.series().meter_id();
            tuned.push(self.checkpoint(Stage::Tune, id, || tune_building(input, cfg))?);
        }
        let mut rows = Vec::new();
        for (input, outcomes) in inputs.iter().zip(&tuned) {
            for o in outcomes {
                summary.tuning.push((input.series().meter_id().to_string(), o.clone()));
                for (c, score) in &o.scores {
                    rows.push(vec![
                        input.series().meter_id().to_string(),
                        o.id.label(),
                        c.to_string(),
                        score.map_or_else(String::new, |s| s.to_string()),
                        (*c == o.best).to_string(),
                    ]);
                }
            }
        }
        let bytes = csv_bytes(&self.comments(), &["building", "member", "candidate", "validation_mae", "selected"], rows)?;
        self.write("tuning.csv", &bytes)?;
        if self.done(Stage::Tune) {
            return Ok(());
        }

        self.begin(Stage::Forecast);
        let mut ensembles = Vec::new();
        for (input, t) in inputs.iter().zip(&tuned) {
            let id = input.series().meter_id();
            let members = self.checkpoint(Stage::Forecast, id, || forecast_building(input, cfg, t))?;
            let ens = assemble_ensemble(&members)?;
            let mut buf = Vec::new();
            let mut comments = self.comments();
            comments.push(format!(
                "members={}",
                member_order().iter().map(|m| m.label()).collect::<Vec<_>>().join(",")
            ));
            write_forecast_csv(&mut buf, &comments, &ens)?;
            self.write(&format!("forecasts_{}.csv", file_safe(id)), &buf)?;
            ensembles.push(ens);
        }
        if self.done(Stage::Forecast) {
            return Ok(());
        }

        self.begin(Stage::Combine);
        let mut combined = Vec::new();
        for ((input, t), ens) in inputs.iter().zip(&tuned).zip(&ensembles) {
            let id = input.series().meter_id();
            combined.push(self.checkpoint(Stage::Combine, id, || combine_building(input, cfg, ens, t))?);
        }
        let mut rows = Vec::new();
        for (input, c) in inputs.iter().zip(&combined) {
            for f in &c.fits {
                summary.fits.push((input.series().meter_id().to_string(), f.clone()));
                rows.push(vec![
                    input.series().meter_id().to_string(),
                    f.fit_day.to_string(),
                    f.model.to_string(),
                    f.window.to_string(),
                    f.status.name().to_string(),
                    f.detail.clone(),
                ]);
            }
        }
        let bytes = csv_bytes(&self.comments(), &["building", "fit_day", "model", "window", "status", "detail"], rows)?;
        self.write("combiner_fits.csv", &bytes)?;
        if self.done(Stage::Combine) {
            return Ok(());
        }

        self.begin(Stage::Evaluate);
        let mut aligned = Vec::new();
        for ((input, c), ens) in inputs.iter().zip(&combined).zip(&ensembles) {
            let id = input.series().meter_id();
            let a = align(input.series(), &c.predictions)?;
            let test = spans(input, cfg)?.test;
            summary.point.extend(point_metrics(id, input.series(), ens, &test)?);
            for (crps, pit) in score_models(id, &a, cfg)? {
                summary.crps.push(crps);
                summary.pit.push(pit);
            }
            if cfg.runtime.write_quantiles {
                self.write_quantiles(id, &a)?;
            }
            aligned.push(a);
        }
        add_cross_building_means(summary, inputs.len());
        self.write_metrics(summary)?;
        if self.done(Stage::Evaluate) {
            return Ok(());
        }

        self.begin(Stage::Detect);
        let kinds = cfg.model_kinds()?;
        let mut per_model: BTreeMap<CombinerKind, Vec<RocCurve>> = BTreeMap::new();
        for (input, a) in inputs.iter().zip(&aligned) {
            let id = input.series().meter_id();
            for (model, result) in detect_building(id, a, cfg)? {
                let mut buf = Vec::new();
                write_runs_csv(&mut buf, &self.comments(), &result.runs)?;
                self.write(&format!("detection_{}_{}.csv", file_safe(id), file_safe(model.name())), &buf)?;
                summary.roc.push(RocRow {
                    building: id.to_string(),
                    model,
                    curve: result.averaged.clone(),
                });
                per_model.entry(model).or_default().push(result.averaged);
            }
        }
        for model in kinds {
            let curves: Vec<&RocCurve> = per_model[&model].iter().collect();
            summary.roc.push(RocRow {
                building: ALL_BUILDINGS.into(),
                model,
                curve: average_curves(&curves)?,
            });
        }
        let rows = summary.roc.iter().flat_map(|r| {
            r.curve.points.iter().map(move |p| {
                vec![
                    r.building.clone(),
                    r.model.to_string(),
                    p.tau_lower.to_string(),
                    p.fpr.to_string(),
                    p.tpr.to_string(),
                ]
            })
        });
        let bytes = csv_bytes(&self.comments(), &["building", "model", "tau_lower", "fpr", "tpr"], rows)?;
        self.write("roc.csv", &bytes)?;
        if self.done(Stage::Detect) {
            return Ok(());
        }

        self.begin(Stage::Report);
        let report = render_report(cfg, summary);
        self.write("report.md", report.as_bytes())?;
        self.done(Stage::Report);
        Ok(())
    }

    fn write_quantiles(&mut self, building: &str, a: &Aligned) -> Result<()> {
        let levels = quantile_levels();
        let mut header = vec!["timestamp".to_string()];
        header.extend(levels.iter().map(|l| format!("q{:02}", (l * 100.0).round() as usize)));
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        for (model, dists) in &a.models {
            let rows = a
                .hours
                .iter()
                .zip(dists)
                .map(|(ts, d)| {
                    let mut r = vec![fmt_ts(*ts)];
                    for &l in &levels {
                        r.push(d.quantile(l)?.to_string());
                    }
                    Ok(r)
                })
                .collect::<Result<Vec<_>>>()?;
            let bytes = csv_bytes(&self.comments(), &header, rows)?;
            self.write(&format!("quantiles_{}_{}.csv", file_safe(building), file_safe(model.name())), &bytes)?;
        }
        Ok(())
    }

    fn write_metrics(&mut self, s: &RunSummary) -> Result<()> {
        let rows = s.point.iter().map(|r| {
            vec![r.building.clone(), r.forecaster.clone(), r.mae.to_string(), r.rmse.to_string(), r.n.to_string()]
        });
        let bytes = csv_bytes(&self.comments(), &["building", "forecaster", "mae", "rmse", "n"], rows)?;
        self.write("point_metrics.csv", &bytes)?;
        let rows = s
            .crps
            .iter()
            .map(|r| vec![r.building.clone(), r.model.to_string(), r.crps.to_string(), r.n.to_string()]);
        let bytes = csv_bytes(&self.comments(), &["building", "model", "crps", "n"], rows)?;
        self.write("crps.csv", &bytes)?;
        let rows = s.pit.iter().flat_map(|r| {
            let h = &r.histogram;
            h.bin_frequencies.iter().enumerate().map(move |(k, f)| {
                vec![
                    r.building.clone(),
                    r.model.to_string(),
                    h.bin_edges[k].to_string(),
                    h.bin_edges[k + 1].to_string(),
                    f.to_string(),
                ]
            })
        });
        let bytes = csv_bytes(&self.comments(), &["building", "model", "bin_lower", "bin_upper", "frequency"], rows)?;
        self.write("pit.csv", &bytes)
    }

    fn finish(&mut self, error: Option<&Error>) -> Result<Manifest> {
        let manifest = Manifest {
            config_hash: self.hash.clone(),
            master_seed: self.cfg.master_seed,
            status: if self.completed.contains(&Stage::Report) {
                RunStatus::Complete
            } else {
                RunStatus::Incomplete
            },
            stages_completed: self.completed.clone(),
            failed_stage: error.map(|_| self.current),
            error: error.map(|e| e.to_string()),
            artifacts: self.artifacts.values().cloned().collect(),
        };
        let path = self.out.join(MANIFEST_FILE);
        let json = serde_json::to_string_pretty(&manifest)?;
        fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
        Ok(manifest)
    }
}

fn add_cross_building_means(s: &mut RunSummary, n_buildings: usize) {
    if n_buildings == 0 {
        return;
    }
    let k = n_buildings as f64;
    let mut point: BTreeMap<String, (f64, f64, usize, usize)> = BTreeMap::new();
    let mut order = Vec::new();
    for r in &s.point {
        let e = point.entry(r.forecaster.clone()).or_insert_with(|| {
            order.push(r.forecaster.clone());
            (0.0, 0.0, 0, 0)
        });
        e.0 += r.mae;
        e.1 += r.rmse;
        e.2 += r.n;
        e.3 += 1;
    }
    for f in order {
        let (m, r, n, _) = point[&f];
        s.point.push(PointRow {
            building: ALL_BUILDINGS.into(),
            forecaster: f,
            mae: m / k,
            rmse: r / k,
            n,
        });
    }
    let mut crps: BTreeMap<CombinerKind, (f64, usize)> = BTreeMap::new();
    for r in &s.crps {
        let e = crps.entry(r.model).or_default();
        e.0 += r.crps;
        e.1 += r.n;
    }
    for (model, (c, n)) in crps {
        s.crps.push(CrpsRow {
            building: ALL_BUILDINGS.into(),
            model,
            crps: c / k,
            n,
        });
    }
}

pub fn render_report(cfg: &RunConfig, s: &RunSummary) -> String {
    let mut r = String::new();
    let _ = writeln!(r, "# Heat load forecast combination report\n");
    let _ = writeln!(r, "config_hash `{}`, master_seed `{}`\n", s.config_hash, s.master_seed);
    let sp = &cfg.splits;
    let _ = writeln!(
        r,
        "Train {} to {}, validation {} to {}, test {} to {}; heating period {} to {}.\n",
        sp.train.start, sp.train.end, sp.validation.start, sp.validation.end, sp.test.start, sp.test.end,
        cfg.heating.start, cfg.heating.end
    );

    let _ = writeln!(r, "## Tuned hyperparameters\n");
    let _ = writeln!(r, "| building | member | selected |\n|---|---|---|");
    for (b, o) in &s.tuning {
        let _ = writeln!(r, "| {b} | {} | {} |", o.id, o.best);
    }

    let _ = writeln!(r, "\n## Point forecasts (test period, all buildings)\n");
    let _ = writeln!(r, "| forecaster | MAE | RMSE |\n|---|---|---|");
    for p in s.point.iter().filter(|p| p.building == ALL_BUILDINGS) {
        let _ = writeln!(r, "| {} | {:.4} | {:.4} |", p.forecaster, p.mae, p.rmse);
    }

    let _ = writeln!(r, "\n## CRPS (test period, all buildings)\n");
    let _ = writeln!(r, "| model | CRPS |\n|---|---|");
    for c in s.crps.iter().filter(|c| c.building == ALL_BUILDINGS) {
        let _ = writeln!(r, "| {} | {:.4} |", c.model, c.crps);
    }

    let _ = writeln!(r, "\n## PIT histograms\n");
    let _ = writeln!(
        r,
        "| building | model | {} |\n|---|---|{}",
        (1..=10).map(|k| format!("{:.1}", k as f64 / 10.0)).collect::<Vec<_>>().join(" | "),
        "---|".repeat(10)
    );
    for p in &s.pit {
        let f: Vec<String> = p.histogram.bin_frequencies.iter().map(|v| format!("{v:.3}")).collect();
        let _ = writeln!(r, "| {} | {} | {} |", p.building, p.model, f.join(" | "));
    }

    let _ = writeln!(r, "\n## Anomaly detection (all buildings, {} runs)\n", cfg.experiment.runs);
    let _ = writeln!(r, "| model | TPR at FPR 0.05 | TPR at FPR 0.1 |\n|---|---|---|");
    for c in s.roc.iter().filter(|c| c.building == ALL_BUILDINGS) {
        let _ = writeln!(r, "| {} | {:.3} | {:.3} |", c.model, c.curve.tpr_at(0.05), c.curve.tpr_at(0.1));
    }
    if let Some(rate) = s.gamlss_fallback_rate() {
        let _ = writeln!(r, "\nGAMLSS refits that fell back to EA: {:.1}%.", 100.0 * rate);
    }
    r
}

/// Runs the stages up to `opts.through` and always leaves a manifest behind.
pub fn run_pipeline(cfg: &RunConfig, opts: RunOptions) -> Result<(RunSummary, Manifest)> {
    cfg.validate()?;
    let mut runner = Runner::new(cfg, opts)?;
    let mut summary = RunSummary::default();
    match runner.execute(&mut summary) {
        Ok(()) => {
            let manifest = runner.finish(None)?;
            Ok((summary, manifest))
        }
        Err(e) => {
            let e = e.in_stage(runner.current.name());
            let _ = runner.finish(Some(&e));
            Err(e)
        }
    }
}

/// Writes each synthetic building to `<dir>/<meter id>.csv`.
pub fn write_buildings(series: &[LoadSeries], dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    series
        .iter()
        .map(|s| {
            let path = dir.join(format!("{}.csv", file_safe(s.meter_id())));
            crate::timeseries::write_csv_file(s, &path)?;
            Ok(path)
        })
        .collect()
}
