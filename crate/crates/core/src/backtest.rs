//! Rolling day-ahead backtests, grid-search tuning and ensemble assembly.

use std::io::{Read, Write};
use std::ops::Range;
use std::sync::OnceLock;

use chrono::{NaiveDate, NaiveDateTime};
use log::{debug, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureBuilder, FeatureMatrix, FeatureSet, WorkCalendar};
use crate::forecasters::{FittedModel, ForecasterId, Hyperparameter, Method};
use crate::metrics::mae;
use crate::timeseries::{fmt_ts, parse_timestamp, HeatingPeriodSpec, LoadSeries};

pub const WINDOWS: [usize; 3] = [60, 90, 365];

/// Lasso-60, GBR-60, GAM-60, Lasso-90, ..., GAM-365.
pub fn member_order() -> Vec<ForecasterId> {
    WINDOWS
        .iter()
        .flat_map(|&w| Method::ALL.iter().map(move |&m| ForecasterId::new(m, w)))
        .collect()
}

/// Minimum share of usable rows in a training window.
pub const MIN_USABLE_FRACTION: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub d_train: usize,
}

impl WindowSpec {
    pub fn new(d_train: usize) -> Result<Self> {
        if d_train == 0 {
            return Err(Error::Config("training window must span at least one day".into()));
        }
        Ok(Self { d_train })
    }

    pub fn n_train(&self) -> usize {
        24 * self.d_train
    }
}

/// Point forecasts of one member; `None` marks a day whose fit was skipped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointForecasts {
    pub id: ForecasterId,
    pub hours: Vec<NaiveDateTime>,
    pub values: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleForecast {
    pub target_hour: NaiveDateTime,
    pub members: Vec<f64>,
    pub ensemble_mean: f64,
    pub ensemble_sd: f64,
}

impl EnsembleForecast {
    pub fn from_members(target_hour: NaiveDateTime, members: Vec<f64>) -> Result<Self> {
        if members.len() < 2 {
            return Err(Error::InvalidInput("an ensemble needs at least two members".into()));
        }
        if members.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite member forecast at {target_hour}")));
        }
        let m = members.len() as f64;
        let mean = members.iter().sum::<f64>() / m;
        let var = members.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0);
        Ok(Self {
            target_hour,
            members,
            ensemble_mean: mean,
            ensemble_sd: var.sqrt(),
        })
    }
}

/// Aligns member forecasts hour by hour; hours with any missing member are dropped.
pub fn assemble_ensemble(members: &[PointForecasts]) -> Result<Vec<EnsembleForecast>> {
    let Some(first) = members.first() else {
        return Err(Error::InvalidInput("no member forecasts".into()));
    };
    for m in members {
        if m.hours != first.hours || m.values.len() != m.hours.len() {
            return Err(Error::InvalidInput(format!(
                "member {} is not aligned with member {}",
                m.id, first.id
            )));
        }
    }
    let mut out = Vec::with_capacity(first.hours.len());
    for (h, &ts) in first.hours.iter().enumerate() {
        let v: Option<Vec<f64>> = members.iter().map(|m| m.values[h]).collect();
        if let Some(v) = v {
            out.push(EnsembleForecast::from_members(ts, v)?);
        }
    }
    Ok(out)
}


#[derive(Debug, Clone, Copy)]
struct RetainedDay {
    date: NaiveDate,
    hours: (usize, usize),
}

/// Feature rows of every series index, built once per feature set.
type FeatureTable = Vec<Option<Vec<f64>>>;

/// A gap-free series prepared for rolling forecasts.
///
/// Training windows are counted in days retained by the heating-period
/// filter; features still use the full calendar history for their lags.
pub struct BacktestInput<'a> {
    builder: FeatureBuilder<'a>,
    days: Vec<RetainedDay>,
    tables: [OnceLock<FeatureTable>; 4],
}

fn table_slot(set: FeatureSet) -> usize {
    match set {
        FeatureSet::Lasso => 0,
        FeatureSet::Gbr => 1,
        FeatureSet::Gam { include_woy: false } => 2,
        FeatureSet::Gam { include_woy: true } => 3,
    }
}

impl<'a> BacktestInput<'a> {
    pub fn new(series: &'a LoadSeries, calendar: WorkCalendar, heating: &HeatingPeriodSpec) -> Result<Self> {
        let builder = FeatureBuilder::new(series, calendar)?;
        let mut days: Vec<RetainedDay> = Vec::new();
        for i in 0..series.len() {
            let date = series.timestamp(i).date();
            match days.last_mut() {
                Some(d) if d.date == date => d.hours.1 = i + 1,
                _ => days.push(RetainedDay { date, hours: (i, i + 1) }),
            }
        }
        days.retain(|d| heating.contains(d.date));
        Ok(Self {
            builder,
            days,
            tables: Default::default(),
        })
    }

    pub fn series(&self) -> &LoadSeries {
        self.builder.series()
    }

    /// Retained days, in order.
    pub fn days(&self) -> Vec<NaiveDate> {
        self.days.iter().map(|d| d.date).collect()
    }

    /// Retained days within `[start, end]`.
    pub fn days_between(&self, start: NaiveDate, end: NaiveDate) -> Vec<NaiveDate> {
        self.days.iter().map(|d| d.date).filter(|d| (start..=end).contains(d)).collect()
    }

    fn day(&self, date: NaiveDate) -> Option<(usize, &RetainedDay)> {
        let pos = self.days.partition_point(|d| d.date < date);
        self.days.get(pos).filter(|d| d.date == date).map(|d| (pos, d))
    }

    pub fn day_hours(&self, date: NaiveDate) -> Option<Range<usize>> {
        self.day(date).map(|(_, d)| d.hours.0..d.hours.1)
    }

    fn window_matrix(&self, set: FeatureSet, window_days: usize, day_pos: usize) -> Result<Option<FeatureMatrix>> {
        let window = WindowSpec::new(window_days)?;
        let table = self.table(set);
        let series = self.series();
        let first = day_pos.saturating_sub(window.d_train);
        let cutoff = self.days[day_pos].date.and_hms_opt(0, 0, 0).expect("midnight exists");
        let mut values = Vec::new();
        let mut target = Vec::new();
        for d in &self.days[first..day_pos] {
            for t in d.hours.0..d.hours.1 {
                if let (Some(row), Some(y)) = (&table[t], series.load(t)) {
                    assert!(series.timestamp(t) < cutoff, "training row at or after the target day");
                    values.extend_from_slice(row);
                    target.push(y);
                }
            }
        }
        if (target.len() as f64) < MIN_USABLE_FRACTION * window.n_train() as f64 {
            return Ok(None);
        }
        FeatureMatrix::new(set.column_names(), values, target).map(Some)
    }

    /// Training rows from the `window_days` retained days before `date`;
    /// `None` when fewer than half of them are usable.
    pub fn training_matrix(&self, set: FeatureSet, window_days: usize, date: NaiveDate) -> Result<Option<FeatureMatrix>> {
        let (pos, _) = self
            .day(date)
            .ok_or_else(|| Error::InvalidInput(format!("{date} is not a retained day of the series")))?;
        self.window_matrix(set, window_days, pos)
    }

    /// Complete feature rows of one retained day and their series indices.
    pub fn day_matrix(&self, set: FeatureSet, date: NaiveDate) -> Result<(Vec<usize>, FeatureMatrix)> {
        let hours = self
            .day_hours(date)
            .ok_or_else(|| Error::InvalidInput(format!("{date} is not a retained day of the series")))?;
        let table = self.table(set);
        let idx: Vec<usize> = hours.filter(|&t| table[t].is_some()).collect();
        let values = idx.iter().flat_map(|&t| table[t].as_ref().unwrap().iter().copied()).collect();
        Ok((idx, FeatureMatrix::new(set.column_names(), values, Vec::new())?))
    }

    fn table(&self, set: FeatureSet) -> &FeatureTable {
        self.tables[table_slot(set)].get_or_init(|| {
            (0..self.series().len()).map(|t| self.builder.row(set, t)).collect()
        })
    }
}

fn fit_for_day(
    input: &BacktestInput,
    id: ForecasterId,
    hyper: Hyperparameter,
    day_pos: usize,
) -> Result<Option<FittedModel>> {
    match input.window_matrix(id.feature_set(), id.window_days, day_pos)? {
        Some(x) => FittedModel::fit(&id, &x, hyper).map(Some),
        None => {
            debug!("{id}: too few usable rows before {}, skipping the day", input.days[day_pos].date);
            Ok(None)
        }
    }
}

fn predict_day(
    input: &BacktestInput,
    id: ForecasterId,
    model: Option<&FittedModel>,
    day: &RetainedDay,
) -> Result<Vec<(NaiveDateTime, Option<f64>)>> {
    let set = id.feature_set();
    let table = input.table(set);
    let series = input.series();
    let hours: Vec<usize> = (day.hours.0..day.hours.1).collect();
    let Some(model) = model else {
        return Ok(hours.iter().map(|&t| (series.timestamp(t), None)).collect());
    };
    let complete: Vec<usize> = hours.iter().copied().filter(|&t| table[t].is_some()).collect();
    let mut preds = vec![None; hours.len()];
    if !complete.is_empty() {
        let values = complete.iter().flat_map(|&t| table[t].as_ref().unwrap().iter().copied()).collect();
        let x = FeatureMatrix::new(set.column_names(), values, Vec::new())?;
        for (t, p) in complete.iter().zip(model.predict(&x)?) {
            if !p.is_finite() {
                return Err(Error::Numeric(format!("{id} produced a non-finite forecast")));
            }
            preds[t - day.hours.0] = Some(p);
        }
    }
    Ok(hours.iter().map(|&t| series.timestamp(t)).zip(preds).collect())
}

/// Day-ahead forecasts for each target day from a model trained on the
/// `window_days` retained days before it. With `retrain_every_days > 1`, one
/// fit serves that many consecutive target days.
pub fn rolling_day_ahead(
    input: &BacktestInput,
    id: ForecasterId,
    hyper: Hyperparameter,
    target_days: &[NaiveDate],
    retrain_every_days: usize,
) -> Result<PointForecasts> {
    if retrain_every_days == 0 {
        return Err(Error::Config("retrain_every_days must be at least 1".into()));
    }
    if target_days.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidInput("target days must be strictly increasing".into()));
    }
    let positions = target_days
        .iter()
        .map(|&d| {
            input
                .day(d)
                .map(|(p, _)| p)
                .ok_or_else(|| Error::InvalidInput(format!("{d} is not a retained day of the series")))
        })
        .collect::<Result<Vec<_>>>()?;
    let chunks: Vec<&[usize]> = positions.chunks(retrain_every_days).collect();
    let parts = chunks
        .par_iter()
        .map(|chunk| {
            let model = fit_for_day(input, id, hyper, chunk[0])?;
            let mut out = Vec::new();
            for &p in chunk.iter() {
                out.extend(predict_day(input, id, model.as_ref(), &input.days[p])?);
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    let (hours, values) = parts.into_iter().flatten().unzip();
    Ok(PointForecasts { id, hours, values })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningGrid {
    pub method: Method,
    pub candidates: Vec<Hyperparameter>,
}

impl TuningGrid {
    pub fn new(method: Method, candidates: Vec<Hyperparameter>) -> Result<Self> {
        if candidates.is_empty() {
            return Err(Error::Config(format!("empty tuning grid for {method}")));
        }
        for c in &candidates {
            let ok = matches!(
                (method, c),
                (Method::Gbr, Hyperparameter::Depth(d)) if *d >= 1
            ) || matches!(
                (method, c),
                (Method::Lasso | Method::Gam, Hyperparameter::Lambda(l)) if *l >= 0.0 && l.is_finite()
            );
            if !ok {
                return Err(Error::Config(format!("{c} is not a valid {method} candidate")));
            }
        }
        Ok(Self { method, candidates })
    }

    /// Seven log-spaced lambdas from 1e-4 to 1e2, or depths 3 to 6.
    pub fn default_for(method: Method) -> Self {
        let candidates = match method {
            Method::Gbr => (3..=6).map(Hyperparameter::Depth).collect(),
            Method::Lasso | Method::Gam => (-4..=2).map(|e| Hyperparameter::Lambda(10f64.powi(e))).collect(),
        };
        Self { method, candidates }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningOutcome {
    pub id: ForecasterId,
    pub best: Hyperparameter,
    /// Validation MAE per candidate; `None` when the candidate failed.
    pub scores: Vec<(Hyperparameter, Option<f64>)>,
}

/// MAE of the hours that have both a forecast and an observation.
pub fn forecast_mae(series: &LoadSeries, f: &PointForecasts) -> Option<f64> {
    let mut y = Vec::new();
    let mut yhat = Vec::new();
    for (ts, v) in f.hours.iter().zip(&f.values) {
        if let (Some(v), Some(obs)) = (v, series.position(*ts).and_then(|i| series.load(i))) {
            y.push(obs);
            yhat.push(*v);
        }
    }
    mae(&y, &yhat).ok()
}

/// Picks the candidate with the lowest validation MAE; ties go to the more
/// regularized candidate.
pub fn grid_search_tune(
    input: &BacktestInput,
    id: ForecasterId,
    grid: &TuningGrid,
    validation_days: &[NaiveDate],
    retrain_every_days: usize,
) -> Result<TuningOutcome> {
    if grid.method != id.method {
        return Err(Error::Config(format!("grid for {} used to tune {id}", grid.method)));
    }
    let mut scores = Vec::with_capacity(grid.candidates.len());
    for &c in &grid.candidates {
        let score = match rolling_day_ahead(input, id, c, validation_days, retrain_every_days) {
            Ok(f) => forecast_mae(input.series(), &f),
            Err(e) => {
                warn!("{id} with {c} failed during tuning: {e}");
                None
            }
        };
        debug!("{id} {c}: validation MAE {score:?}");
        scores.push((c, score));
    }
    let best = scores
        .iter()
        .filter_map(|(c, s)| s.map(|s| (*c, s)))
        .min_by(|a, b| {
            a.1.total_cmp(&b.1)
                .then(a.0.regularization_rank().total_cmp(&b.0.regularization_rank()))
        })
        .map(|(c, _)| c)
        .ok_or_else(|| Error::Numeric(format!("every candidate failed for {id}")).in_stage("tune"))?;
    Ok(TuningOutcome { id, best, scores })
}

const FORECAST_FIXED_COLUMNS: [&str; 3] = ["timestamp", "ens_mean", "ens_sd"];

/// Writes `timestamp, member_1..member_M, ens_mean, ens_sd`, preceded by
/// `# ` comment lines.
pub fn write_forecast_csv<W: Write>(mut writer: W, comments: &[String], ens: &[EnsembleForecast]) -> Result<()> {
    for c in comments {
        writeln!(writer, "# {c}").map_err(|e| Error::io("forecast csv", e))?;
    }
    let m = ens.first().map_or(member_order().len(), |e| e.members.len());
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec![FORECAST_FIXED_COLUMNS[0].to_string()];
    header.extend((1..=m).map(|k| format!("member_{k}")));
    header.extend(FORECAST_FIXED_COLUMNS[1..].iter().map(|s| s.to_string()));
    w.write_record(&header)?;
    for e in ens {
        let mut rec = vec![fmt_ts(e.target_hour)];
        rec.extend(e.members.iter().map(|v| v.to_string()));
        rec.push(e.ensemble_mean.to_string());
        rec.push(e.ensemble_sd.to_string());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("forecast csv", e))?;
    Ok(())
}

pub fn read_forecast_csv<R: Read>(reader: R) -> Result<Vec<EnsembleForecast>> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(reader);
    let header = r.headers()?.clone();
    let m = header.iter().filter(|h| h.starts_with("member_")).count();
    if header.len() != m + 3 || header.get(0) != Some("timestamp") {
        return Err(Error::Ingest {
            row: 0,
            message: format!("unexpected forecast header {header:?}"),
        });
    }
    let mut out = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        let bad = |message: String| Error::Ingest { row: row + 1, message };
        let ts = parse_timestamp(&rec[0]).ok_or_else(|| bad(format!("bad timestamp `{}`", &rec[0])))?;
        let members = (1..=m)
            .map(|k| rec[k].parse::<f64>().map_err(|_| bad(format!("bad value `{}`", &rec[k]))))
            .collect::<Result<Vec<_>>>()?;
        out.push(EnsembleForecast::from_members(ts, members)?);
    }
    Ok(out)
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::timeseries::TimePoint;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn start() -> NaiveDate {
        NaiveDate::from_ymd_opt(2019, 1, 1).unwrap()
    }

    /// Hourly series over `days` days from Jan 1 with load given by `f(temp)`.
    fn series(days: usize, seed: u64, f: impl Fn(f64) -> f64) -> LoadSeries {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t0 = start().and_hms_opt(0, 0, 0).unwrap();
        let points = (0..days * 24)
            .map(|h| {
                let temp = rng.random_range(-10.0..15.0);
                TimePoint::new(t0 + chrono::Duration::hours(h as i64), Some(f(temp)), Some(temp))
            })
            .collect();
        LoadSeries::new("m", points).unwrap()
    }

    fn all_year() -> HeatingPeriodSpec {
        HeatingPeriodSpec::new((1, 1), (12, 31)).unwrap()
    }

    fn hours(n: usize) -> Vec<NaiveDateTime> {
        let t0 = NaiveDate::from_ymd_opt(2019, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap();
        (0..n).map(|h| t0 + chrono::Duration::hours(h as i64)).collect()
    }

    #[test]
    fn member_order_is_fixed() {
        let labels: Vec<String> = member_order().iter().map(|m| m.label()).collect();
        assert_eq!(
            labels,
            [
                "Lasso-60", "GBR-60", "GAM-60", "Lasso-90", "GBR-90", "GAM-90", "Lasso-365", "GBR-365",
                "GAM-365"
            ]
        );
    }

    #[test]
    fn ensemble_statistics() {
        let e = EnsembleForecast::from_members(hours(1)[0], (1..=9).map(f64::from).collect()).unwrap();
        assert_eq!(e.ensemble_mean, 5.0);
        assert!((e.ensemble_sd - (60.0f64 / 8.0).sqrt()).abs() < 1e-14);
        let e = EnsembleForecast::from_members(hours(1)[0], vec![100.0; 9]).unwrap();
        assert_eq!((e.ensemble_mean, e.ensemble_sd), (100.0, 0.0));
    }

    #[test]
    fn missing_member_drops_hour() {
        let hs = hours(3);
        let members: Vec<PointForecasts> = member_order()
            .into_iter()
            .enumerate()
            .map(|(k, id)| PointForecasts {
                id,
                hours: hs.clone(),
                values: vec![Some(1.0), if k == 4 { None } else { Some(2.0) }, Some(3.0)],
            })
            .collect();
        let ens = assemble_ensemble(&members).unwrap();
        assert_eq!(ens.len(), 2);
        assert_eq!(ens[1].target_hour, hs[2]);
    }

    #[test]
    fn misaligned_members_error() {
        let ids = member_order();
        let a = PointForecasts { id: ids[0], hours: hours(2), values: vec![Some(1.0); 2] };
        let b = PointForecasts { id: ids[1], hours: hours(3)[1..].to_vec(), values: vec![Some(1.0); 2] };
        assert!(assemble_ensemble(&[a, b]).is_err());
    }

    #[test]
    fn window_plus_one_day_constant_series() {
        let s = series(8 + 20 + 1, 1, |_| 100.0);
        let input = BacktestInput::new(&s, WorkCalendar::default(), &all_year()).unwrap();
        let target = *input.days().last().unwrap();
        for (method, hyper) in [
            (Method::Lasso, Hyperparameter::Lambda(0.01)),
            (Method::Gbr, Hyperparameter::Depth(3)),
            (Method::Gam, Hyperparameter::Lambda(1.0)),
        ] {
            let id = ForecasterId::new(method, 20);
            let f = rolling_day_ahead(&input, id, hyper, &[target], 1).unwrap();
            assert_eq!(f.values.len(), 24);
            assert!(f.values.iter().all(|v| (v.unwrap() - 100.0).abs() < 1.0), "{method}");
        }
    }

    #[test]
    fn short_history_and_missing_temperature() {
        let s = series(40, 2, |t| 100.0 - 2.0 * t);
        let input = BacktestInput::new(&s, WorkCalendar::default(), &all_year()).unwrap();
        let id = ForecasterId::new(Method::Lasso, 20);
        let days = input.days();
        // rows are complete from day 7: 9 usable days before day 16, 10 before day 17
        let f = rolling_day_ahead(&input, id, Hyperparameter::Lambda(0.01), &days[16..=17], 1).unwrap();
        assert!(f.values[..24].iter().all(Option::is_none));
        assert!(f.values[24..].iter().all(Option::is_some));

        let mut pts = s.points().to_vec();
        for p in pts.iter_mut().filter(|p| p.timestamp.date() == days[30]) {
            p.temperature = None;
        }
        let gap = LoadSeries::new("m", pts).unwrap();
        let input = BacktestInput::new(&gap, WorkCalendar::default(), &all_year()).unwrap();
        let f = rolling_day_ahead(&input, id, Hyperparameter::Lambda(0.01), &[days[30]], 1).unwrap();
        assert_eq!(f.values, vec![None; 24]);
    }

    #[test]
    fn forecasts_ignore_the_future() {
        let s = series(45, 3, |t| 80.0 - 1.5 * t);
        let input = BacktestInput::new(&s, WorkCalendar::default(), &all_year()).unwrap();
        let days = input.days();
        let id = ForecasterId::new(Method::Gbr, 20);
        let a = rolling_day_ahead(&input, id, Hyperparameter::Depth(3), &days[30..32], 1).unwrap();

        let cutoff = days[32].and_hms_opt(0, 0, 0).unwrap();
        let replaced: Vec<(usize, f64)> = (0..s.len()).filter(|&i| s.timestamp(i) >= cutoff).map(|i| (i, 1e4)).collect();
        let changed = s.with_loads(&replaced).unwrap();
        let input = BacktestInput::new(&changed, WorkCalendar::default(), &all_year()).unwrap();
        let b = rolling_day_ahead(&input, id, Hyperparameter::Depth(3), &days[30..32], 1).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn heating_filter_counts_retained_days() {
        let s = series(60, 4, |t| 50.0 - t);
        // drop Jan 21..31; windows reach back across the gap
        let heating = HeatingPeriodSpec::new((2, 1), (1, 20)).unwrap();
        let input = BacktestInput::new(&s, WorkCalendar::default(), &heating).unwrap();
        let days = input.days();
        assert_eq!(days.len(), 60 - 11);
        let feb10 = NaiveDate::from_ymd_opt(2019, 2, 10).unwrap();
        let f = rolling_day_ahead(&input, ForecasterId::new(Method::Lasso, 15), Hyperparameter::Lambda(0.01), &[feb10], 1)
            .unwrap();
        assert!(f.values.iter().all(Option::is_some));
        assert!(rolling_day_ahead(&input, ForecasterId::new(Method::Lasso, 15), Hyperparameter::Lambda(0.01), &[NaiveDate::from_ymd_opt(2019, 1, 25).unwrap()], 1).is_err());
    }

    #[test]
    fn retraining_stride_matches_daily_on_first_day() {
        let s = series(40, 5, |t| 70.0 - t);
        let input = BacktestInput::new(&s, WorkCalendar::default(), &all_year()).unwrap();
        let days = input.days();
        let id = ForecasterId::new(Method::Lasso, 20);
        let daily = rolling_day_ahead(&input, id, Hyperparameter::Lambda(0.01), &days[30..34], 1).unwrap();
        let strided = rolling_day_ahead(&input, id, Hyperparameter::Lambda(0.01), &days[30..34], 4).unwrap();
        assert_eq!(daily.hours, strided.hours);
        assert_eq!(daily.values[..24], strided.values[..24]);
    }

    #[test]
    fn tuning_rules() {
        let flat = series(35, 6, |_| 100.0);
        let input = BacktestInput::new(&flat, WorkCalendar::default(), &all_year()).unwrap();
        let days = input.days();
        let id = ForecasterId::new(Method::Lasso, 20);
        let grid = TuningGrid::new(Method::Lasso, vec![Hyperparameter::Lambda(1e3), Hyperparameter::Lambda(1e4)]).unwrap();
        let out = grid_search_tune(&input, id, &grid, &days[30..33], 1).unwrap();
        assert_eq!(out.best, Hyperparameter::Lambda(1e4));

        let single = TuningGrid::new(Method::Lasso, vec![Hyperparameter::Lambda(5.0)]).unwrap();
        assert_eq!(grid_search_tune(&input, id, &single, &days[30..31], 1).unwrap().best, Hyperparameter::Lambda(5.0));

        let linear = series(35, 7, |t| 200.0 - 3.0 * t);
        let input = BacktestInput::new(&linear, WorkCalendar::default(), &all_year()).unwrap();
        let grid = TuningGrid::new(Method::Lasso, vec![Hyperparameter::Lambda(1e-4), Hyperparameter::Lambda(1e2)]).unwrap();
        let out = grid_search_tune(&input, id, &grid, &days[30..33], 1).unwrap();
        assert_eq!(out.best, Hyperparameter::Lambda(1e-4));
        assert!(out.scores[0].1.unwrap() < out.scores[1].1.unwrap());

        assert!(TuningGrid::new(Method::Gbr, vec![]).is_err());
        assert!(TuningGrid::new(Method::Gbr, vec![Hyperparameter::Lambda(1.0)]).is_err());
        assert_eq!(TuningGrid::default_for(Method::Gam).candidates.len(), 7);
    }

    #[test]
    fn forecast_csv_roundtrip() {
        let hs = hours(3);
        let ens: Vec<EnsembleForecast> = hs
            .iter()
            .enumerate()
            .map(|(k, &h)| EnsembleForecast::from_members(h, (0..9).map(|j| 10.0 * k as f64 + j as f64 / 3.0).collect()).unwrap())
            .collect();
        let mut buf = Vec::new();
        write_forecast_csv(&mut buf, &["seed=1".into()], &ens).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# seed=1\ntimestamp,member_1,"));
        assert!(text.lines().nth(1).unwrap().ends_with("member_9,ens_mean,ens_sd"));
        assert_eq!(read_forecast_csv(buf.as_slice()).unwrap(), ens);
    }
}
