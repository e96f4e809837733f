//! Derived regressors: lags, daily peak/average aggregates, heating degree
//! hours and calendar indicators.

use std::collections::BTreeSet;
use std::io::Write;

use chrono::{Datelike, Duration, NaiveDate, NaiveDateTime, Timelike, Weekday};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::timeseries::LoadSeries;

/// Base temperature for heating degree hours, in °C.
pub const HDH_BASE_TEMP: f64 = 18.0;

pub fn hdh(temperature: f64) -> f64 {
    (HDH_BASE_TEMP - temperature).max(0.0)
}

/// Per-day aggregates. A field is `None` when any contributing hour is missing
/// or the day is not fully covered by the series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DailyAggregates {
    pub day: NaiveDate,
    pub load_peak: Option<f64>,
    pub load_avg: Option<f64>,
    pub temp_peak: Option<f64>,
    pub temp_avg: Option<f64>,
    pub hdh_avg: Option<f64>,
}

pub fn daily_aggregates(series: &LoadSeries) -> Vec<DailyAggregates> {
    let mut out: Vec<DailyAggregates> = Vec::new();
    let points = series.points();
    let mut i = 0;
    while i < points.len() {
        let day = points[i].date();
        let mut j = i;
        while j < points.len() && points[j].date() == day {
            j += 1;
        }
        let hours = &points[i..j];
        let loads: Option<Vec<f64>> = hours.iter().map(|p| p.load).collect();
        let temps: Option<Vec<f64>> = hours.iter().map(|p| p.temperature).collect();
        let full = hours.len() == 24;
        let loads = loads.filter(|_| full);
        let temps = temps.filter(|_| full);
        out.push(DailyAggregates {
            day,
            load_peak: loads.as_deref().map(max),
            load_avg: loads.as_deref().map(mean),
            temp_peak: temps.as_deref().map(max),
            temp_avg: temps.as_deref().map(mean),
            hdh_avg: temps
                .as_deref()
                .map(|t| t.iter().map(|&x| hdh(x)).sum::<f64>() / t.len() as f64),
        });
        i = j;
    }
    out
}

fn max(xs: &[f64]) -> f64 {
    xs.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Calendar indicators for one hour.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CalendarFeatures {
    /// Hour of day, 0..=23.
    pub hod: u32,
    /// Day of week, Monday = 0.
    pub dow: u32,
    /// ISO-8601 week number, 1..=53.
    pub woy: u32,
    pub is_working_day: bool,
    /// Working day and 9:00 <= hour < 17:00.
    pub is_working_time: bool,
}

/// Working-day calendar: Monday to Friday minus listed holidays.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkCalendar {
    pub holidays: BTreeSet<NaiveDate>,
}

impl WorkCalendar {
    pub fn is_working_day(&self, day: NaiveDate) -> bool {
        !matches!(day.weekday(), Weekday::Sat | Weekday::Sun) && !self.holidays.contains(&day)
    }

    pub fn features(&self, ts: NaiveDateTime) -> CalendarFeatures {
        let day = ts.date();
        let hod = ts.hour();
        let is_working_day = self.is_working_day(day);
        CalendarFeatures {
            hod,
            dow: day.weekday().num_days_from_monday(),
            woy: day.iso_week().week(),
            is_working_day,
            is_working_time: is_working_day && (9..17).contains(&hod),
        }
    }
}

/// Which model's regressors to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FeatureSet {
    Lasso,
    Gbr,
    Gam { include_woy: bool },
}

const LASSO_COLUMNS: [&str; 18] = [
    "load_lag24",
    "load_lag48",
    "load_lag72",
    "load_lag96",
    "load_lag120",
    "load_lag144",
    "load_lag168",
    "temp",
    "temp_lag24",
    "temp_peak_prev",
    "temp_avg_day",
    "load_peak_prev",
    "load_avg_prev",
    "hdh_avg_prev",
    "hdh_avg_day",
    "hdh_lag24",
    "working_day",
    "working_time",
];

const GBR_COLUMNS: [&str; 14] = [
    "load_lag24",
    "load_lag48",
    "load_lag72",
    "load_lag168",
    "load_peak_prev",
    "load_avg_prev",
    "temp",
    "temp_lag24",
    "temp_peak_prev",
    "hdh_avg_day",
    "hdh",
    "hod",
    "dow",
    "woy",
];

const GAM_SPLINE_COLUMNS: [&str; 6] = [
    "load_lag24",
    "load_lag168",
    "load_peak_prev",
    "temp",
    "temp_avg_prev",
    "hod",
];

const DOW_DUMMIES: [&str; 6] = [
    "dow_mon", "dow_tue", "dow_wed", "dow_thu", "dow_fri", "dow_sat",
];

impl FeatureSet {
    pub fn column_names(&self) -> Vec<String> {
        match self {
            FeatureSet::Lasso => LASSO_COLUMNS.iter().map(|s| s.to_string()).collect(),
            FeatureSet::Gbr => GBR_COLUMNS.iter().map(|s| s.to_string()).collect(),
            FeatureSet::Gam { include_woy } => {
                let mut names: Vec<String> =
                    GAM_SPLINE_COLUMNS.iter().map(|s| s.to_string()).collect();
                if *include_woy {
                    names.push("woy".into());
                }
                names.extend(DOW_DUMMIES.iter().map(|s| s.to_string()));
                names
            }
        }
    }

    /// Hour offsets of lagged load/temperature inputs.
    pub fn required_lags(&self) -> Vec<usize> {
        match self {
            FeatureSet::Lasso => (1..=7).map(|i| 24 * i).collect(),
            FeatureSet::Gbr => vec![24, 48, 72, 168],
            FeatureSet::Gam { .. } => vec![24, 168],
        }
    }
}

/// Design matrix, row-major, with rows aligned to series indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub column_names: Vec<String>,
    /// Series index of each row.
    pub rows: Vec<usize>,
    pub values: Vec<f64>,
    /// Observed load per row; empty for prediction-only matrices.
    pub target: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(column_names: Vec<String>, values: Vec<f64>, target: Vec<f64>) -> Result<Self> {
        let p = column_names.len();
        if p == 0 || values.len() % p != 0 {
            return Err(Error::InvalidInput(format!(
                "{} values do not fill rows of {p} columns",
                values.len()
            )));
        }
        let n = values.len() / p;
        if !target.is_empty() && target.len() != n {
            return Err(Error::InvalidInput(format!(
                "target length {} does not match {n} rows",
                target.len()
            )));
        }
        Ok(Self {
            column_names,
            rows: (0..n).collect(),
            values,
            target,
        })
    }

    pub fn from_rows(column_names: Vec<String>, rows: &[Vec<f64>], target: Vec<f64>) -> Result<Self> {
        let values = rows.iter().flatten().copied().collect();
        Self::new(column_names, values, target)
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.column_names.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.n_cols();
        &self.values[i * p..(i + 1) * p]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n_rows()).map(|i| self.row(i)[j]).collect()
    }

    pub fn has_target(&self) -> bool {
        !self.target.is_empty()
    }

    pub fn check_columns(&self, expected: &[String]) -> Result<()> {
        if self.column_names != expected {
            return Err(Error::ColumnMismatch {
                expected: expected.to_vec(),
                actual: self.column_names.clone(),
            });
        }
        Ok(())
    }

    pub fn check_finite(&self) -> Result<()> {
        if self.values.iter().chain(&self.target).all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidInput("non-finite value in feature matrix".into()))
        }
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = self.column_names.clone();
        if self.has_target() {
            header.push("target".into());
        }
        w.write_record(&header)?;
        for i in 0..self.n_rows() {
            let mut rec: Vec<String> = self.row(i).iter().map(|v| v.to_string()).collect();
            if self.has_target() {
                rec.push(self.target[i].to_string());
            }
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// Builds feature rows over one contiguous series.
#[derive(Debug, Clone)]
pub struct FeatureBuilder<'a> {
    series: &'a LoadSeries,
    first_day: NaiveDate,
    aggregates: Vec<DailyAggregates>,
    calendar: WorkCalendar,
}

impl<'a> FeatureBuilder<'a> {
    pub fn new(series: &'a LoadSeries, calendar: WorkCalendar) -> Result<Self> {
        if series.is_empty() {
            return Err(Error::InvalidSeries("empty series".into()));
        }
        if !series.is_contiguous() {
            return Err(Error::InvalidSeries(
                "feature construction needs a gap-free hourly series".into(),
            ));
        }
        Ok(Self {
            series,
            first_day: series.timestamp(0).date(),
            aggregates: daily_aggregates(series),
            calendar,
        })
    }

    pub fn series(&self) -> &LoadSeries {
        self.series
    }

    pub fn calendar(&self) -> &WorkCalendar {
        &self.calendar
    }

    pub fn aggregates(&self, day: NaiveDate) -> Option<&DailyAggregates> {
        let offset = (day - self.first_day).num_days();
        usize::try_from(offset)
            .ok()
            .and_then(|o| self.aggregates.get(o))
    }

    fn lag_load(&self, t: usize, lag: usize) -> Option<f64> {
        self.series.lagged(t, lag).and_then(|i| self.series.load(i))
    }

    fn lag_temp(&self, t: usize, lag: usize) -> Option<f64> {
        self.series.lagged(t, lag).and_then(|i| self.series.temperature(i))
    }

    fn day_and_prev(&self, t: usize) -> (Option<&DailyAggregates>, Option<&DailyAggregates>) {
        let day = self.series.timestamp(t).date();
        (self.aggregates(day), self.aggregates(day - Duration::days(1)))
    }

    pub fn row(&self, set: FeatureSet, t: usize) -> Option<Vec<f64>> {
        match set {
            FeatureSet::Lasso => self.lasso_row(t),
            FeatureSet::Gbr => self.gbr_row(t),
            FeatureSet::Gam { include_woy } => self.gam_row(t, include_woy),
        }
    }

    pub fn lasso_row(&self, t: usize) -> Option<Vec<f64>> {
        let (today, prev) = self.day_and_prev(t);
        let (today, prev) = (today?, prev?);
        let cal = self.calendar.features(self.series.timestamp(t));
        let mut row = Vec::with_capacity(LASSO_COLUMNS.len());
        for i in 1..=7 {
            row.push(self.lag_load(t, 24 * i)?);
        }
        let temp_lag24 = self.lag_temp(t, 24)?;
        row.extend([
            self.series.temperature(t)?,
            temp_lag24,
            prev.temp_peak?,
            today.temp_avg?,
            prev.load_peak?,
            prev.load_avg?,
            prev.hdh_avg?,
            today.hdh_avg?,
            hdh(temp_lag24),
            f64::from(u8::from(cal.is_working_day)),
            f64::from(u8::from(cal.is_working_time)),
        ]);
        Some(row)
    }

    pub fn gbr_row(&self, t: usize) -> Option<Vec<f64>> {
        let (today, prev) = self.day_and_prev(t);
        let (today, prev) = (today?, prev?);
        let cal = self.calendar.features(self.series.timestamp(t));
        let temp = self.series.temperature(t)?;
        Some(vec![
            self.lag_load(t, 24)?,
            self.lag_load(t, 48)?,
            self.lag_load(t, 72)?,
            self.lag_load(t, 168)?,
            prev.load_peak?,
            prev.load_avg?,
            temp,
            self.lag_temp(t, 24)?,
            prev.temp_peak?,
            today.hdh_avg?,
            hdh(temp),
            f64::from(cal.hod),
            f64::from(cal.dow),
            f64::from(cal.woy),
        ])
    }

    pub fn gam_row(&self, t: usize, include_woy: bool) -> Option<Vec<f64>> {
        let (_, prev) = self.day_and_prev(t);
        let prev = prev?;
        let cal = self.calendar.features(self.series.timestamp(t));
        let mut row = vec![
            self.lag_load(t, 24)?,
            self.lag_load(t, 168)?,
            prev.load_peak?,
            self.series.temperature(t)?,
            prev.temp_avg?,
            f64::from(cal.hod),
        ];
        if include_woy {
            row.push(f64::from(cal.woy));
        }
        // Sunday (dow 6) is the reference category.
        row.extend((0..6).map(|d| f64::from(u8::from(cal.dow == d))));
        Some(row)
    }

    /// Builds a matrix from the indices whose rows are complete. With
    /// `with_target`, indices with a missing observation are skipped too.
    pub fn matrix(&self, set: FeatureSet, indices: &[usize], with_target: bool) -> FeatureMatrix {
        let mut rows = Vec::with_capacity(indices.len());
        let mut values = Vec::new();
        let mut target = Vec::new();
        for &t in indices {
            let y = self.series.load(t);
            if with_target && y.is_none() {
                continue;
            }
            if let Some(row) = self.row(set, t) {
                rows.push(t);
                values.extend(row);
                if with_target {
                    target.extend(y);
                }
            }
        }
        FeatureMatrix {
            column_names: set.column_names(),
            rows,
            values,
            target,
        }
    }
}
