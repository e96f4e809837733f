//! Hourly load/temperature series, heating-period filtering and CSV ingestion.

use std::io::{Read, Write};
use std::path::Path;

use chrono::{Datelike, Duration, NaiveDate, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

/// One hourly observation. Missing values are `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimePoint {
    pub timestamp: NaiveDateTime,
    pub load: Option<f64>,
    pub temperature: Option<f64>,
}

impl TimePoint {
    pub fn new(timestamp: NaiveDateTime, load: Option<f64>, temperature: Option<f64>) -> Self {
        Self {
            timestamp,
            load,
            temperature,
        }
    }

    pub fn date(&self) -> NaiveDate {
        self.timestamp.date()
    }
}

/// Ordered, hour-aligned series of observations for one meter.
///
/// Timestamps are timezone-naive and strictly increasing. Series produced by
/// [`ingest_csv`] or [`LoadSeries::contiguous`] have no holes: an hour without
/// data is stored as a point with missing load and temperature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadSeries {
    meter_id: String,
    points: Vec<TimePoint>,
}

impl LoadSeries {
    /// Validates ordering, hour alignment and load sign.
    pub fn new(meter_id: impl Into<String>, points: Vec<TimePoint>) -> Result<Self> {
        for (i, p) in points.iter().enumerate() {
            if p.timestamp.minute() != 0 || p.timestamp.second() != 0 || p.timestamp.nanosecond() != 0
            {
                return Err(Error::InvalidSeries(format!(
                    "timestamp {} is not hour-aligned",
                    p.timestamp
                )));
            }
            if let Some(load) = p.load {
                if !(load >= 0.0) || !load.is_finite() {
                    return Err(Error::NegativeLoad {
                        row: i + 1,
                        value: load,
                    });
                }
            }
            if let Some(t) = p.temperature {
                if !t.is_finite() {
                    return Err(Error::InvalidSeries(format!(
                        "non-finite temperature at {}",
                        p.timestamp
                    )));
                }
            }
            if i > 0 {
                let prev = points[i - 1].timestamp;
                if p.timestamp == prev {
                    return Err(Error::DuplicateTimestamp(fmt_ts(p.timestamp)));
                }
                if p.timestamp < prev {
                    return Err(Error::InvalidSeries(format!(
                        "timestamps not increasing at {}",
                        p.timestamp
                    )));
                }
            }
        }
        Ok(Self {
            meter_id: meter_id.into(),
            points,
        })
    }

    /// Sorts the points, rejects duplicates and fills hourly gaps with missing
    /// points.
    pub fn contiguous(meter_id: impl Into<String>, mut points: Vec<TimePoint>) -> Result<Self> {
        points.sort_by_key(|p| p.timestamp);
        for w in points.windows(2) {
            if w[0].timestamp == w[1].timestamp {
                return Err(Error::DuplicateTimestamp(fmt_ts(w[0].timestamp)));
            }
        }
        let mut filled = Vec::with_capacity(points.len());
        for p in points {
            if let Some(last) = filled.last().map(|q: &TimePoint| q.timestamp) {
                let mut ts = last + Duration::hours(1);
                while ts < p.timestamp {
                    filled.push(TimePoint::new(ts, None, None));
                    ts += Duration::hours(1);
                }
            }
            filled.push(p);
        }
        Self::new(meter_id, filled)
    }

    pub fn meter_id(&self) -> &str {
        &self.meter_id
    }

    pub fn points(&self) -> &[TimePoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn timestamp(&self, idx: usize) -> NaiveDateTime {
        self.points[idx].timestamp
    }

    pub fn load(&self, idx: usize) -> Option<f64> {
        self.points[idx].load
    }

    pub fn temperature(&self, idx: usize) -> Option<f64> {
        self.points[idx].temperature
    }

    /// True when consecutive points are exactly one hour apart.
    pub fn is_contiguous(&self) -> bool {
        self.points
            .windows(2)
            .all(|w| w[1].timestamp - w[0].timestamp == Duration::hours(1))
    }

    pub fn position(&self, ts: NaiveDateTime) -> Option<usize> {
        self.points.binary_search_by_key(&ts, |p| p.timestamp).ok()
    }

    /// Index of the point `lag` hours before `idx`, if present in the series.
    pub fn lagged(&self, idx: usize, lag: usize) -> Option<usize> {
        let target = self.points[idx].timestamp - Duration::hours(lag as i64);
        if idx >= lag && self.points[idx - lag].timestamp == target {
            return Some(idx - lag);
        }
        self.points[..idx]
            .binary_search_by_key(&target, |p| p.timestamp)
            .ok()
    }

    pub fn missing_count(&self) -> usize {
        self.points
            .iter()
            .filter(|p| p.load.is_none() || p.temperature.is_none())
            .count()
    }

    /// Returns a copy with the given loads replaced (indices into this series).
    pub fn with_loads(&self, replacements: &[(usize, f64)]) -> Result<Self> {
        let mut points = self.points.clone();
        for &(idx, value) in replacements {
            points[idx].load = Some(value);
        }
        Self::new(self.meter_id.clone(), points)
    }

    pub fn filter_heating_period(&self, spec: &HeatingPeriodSpec) -> LoadSeries {
        LoadSeries {
            meter_id: self.meter_id.clone(),
            points: self
                .points
                .iter()
                .filter(|p| spec.contains(p.timestamp.date()))
                .copied()
                .collect(),
        }
    }
}

/// Calendar window, inclusive on both ends, that may wrap the year boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeatingPeriodSpec {
    pub start_month_day: (u32, u32),
    pub end_month_day: (u32, u32),
}

impl Default for HeatingPeriodSpec {
    fn default() -> Self {
        Self {
            start_month_day: (9, 1),
            end_month_day: (5, 31),
        }
    }
}

impl HeatingPeriodSpec {
    pub fn new(start_month_day: (u32, u32), end_month_day: (u32, u32)) -> Result<Self> {
        for (m, d) in [start_month_day, end_month_day] {
            // 2020 is a leap year so Feb 29 is accepted.
            if NaiveDate::from_ymd_opt(2020, m, d).is_none() {
                return Err(Error::Config(format!("invalid month-day {m:02}-{d:02}")));
            }
        }
        Ok(Self {
            start_month_day,
            end_month_day,
        })
    }

    /// Parses `"MM-DD"`.
    pub fn parse_month_day(s: &str) -> Result<(u32, u32)> {
        let (m, d) = s
            .split_once('-')
            .ok_or_else(|| Error::Config(format!("expected MM-DD, got `{s}`")))?;
        let m = m
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("bad month in `{s}`")))?;
        let d = d
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("bad day in `{s}`")))?;
        Ok((m, d))
    }

    pub fn contains(&self, day: NaiveDate) -> bool {
        let md = (day.month(), day.day());
        let (start, end) = (self.start_month_day, self.end_month_day);
        if start <= end {
            start <= md && md <= end
        } else {
            md >= start || md <= end
        }
    }
}

/// Column names for CSV ingestion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CsvSchema {
    pub timestamp: String,
    pub load: String,
    pub temperature: String,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            timestamp: "timestamp".into(),
            load: "load_kw".into(),
            temperature: "temp_c".into(),
        }
    }
}

pub fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"]
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
}

pub fn fmt_ts(ts: NaiveDateTime) -> String {
    ts.format(TIMESTAMP_FORMAT).to_string()
}

fn parse_value(cell: &str) -> Option<f64> {
    let cell = cell.trim();
    if cell.is_empty() {
        return None;
    }
    cell.parse::<f64>().ok().filter(|v| v.is_finite())
}

pub fn ingest_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<LoadSeries> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let meter_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    ingest_reader(file, &meter_id, schema)
}

/// Parses CSV from any reader. Lines starting with `#` are comments.
pub fn ingest_reader<R: Read>(reader: R, meter_id: &str, schema: &CsvSchema) -> Result<LoadSeries> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::Ingest {
            row: 1,
            message: format!("missing column `{name}`"),
        })
    };
    let (ts_col, load_col, temp_col) = (
        col(&schema.timestamp)?,
        col(&schema.load)?,
        col(&schema.temperature)?,
    );

    let mut points = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let row = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let ts_raw = record.get(ts_col).unwrap_or("");
        let timestamp = parse_timestamp(ts_raw).ok_or_else(|| Error::Ingest {
            row,
            message: format!("malformed timestamp `{ts_raw}`"),
        })?;
        if timestamp.minute() != 0 || timestamp.second() != 0 {
            return Err(Error::Ingest {
                row,
                message: format!("timestamp `{ts_raw}` is not hour-aligned"),
            });
        }
        let load = record.get(load_col).and_then(parse_value);
        if let Some(v) = load {
            if v < 0.0 {
                return Err(Error::NegativeLoad { row, value: v });
            }
        }
        let temperature = record.get(temp_col).and_then(parse_value);
        points.push(TimePoint::new(timestamp, load, temperature));
    }
    LoadSeries::contiguous(meter_id, points)
}

pub fn write_csv<W: Write>(series: &LoadSeries, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["timestamp", "load_kw", "temp_c"])?;
    for p in series.points() {
        w.write_record([
            fmt_ts(p.timestamp),
            p.load.map(|v| v.to_string()).unwrap_or_default(),
            p.temperature.map(|v| v.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

pub fn write_csv_file(series: &LoadSeries, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(series, std::io::BufWriter::new(file))
}

/// Indices `t` whose load and temperature are present and whose lagged
/// points `t - lag` exist with both values present, for every lag.
pub fn drop_incomplete(series: &LoadSeries, required_lags: &[usize]) -> Vec<usize> {
    let complete = |i: usize| series.load(i).is_some() && series.temperature(i).is_some();
    (0..series.len())
        .filter(|&t| {
            complete(t)
                && required_lags
                    .iter()
                    .all(|&lag| series.lagged(t, lag).is_some_and(complete))
        })
        .collect()
}
