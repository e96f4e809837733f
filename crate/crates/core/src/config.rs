//! Run configuration read from TOML.

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backtest::TuningGrid;
use crate::combiners::{CombinerKind, GamlssOptions};
use crate::error::{Error, Result};
use crate::forecasters::{Hyperparameter, Method};
use crate::metrics::{DEFAULT_CRPS_SAMPLES, DEFAULT_SWEEP};
use crate::synthetic::SyntheticSpec;
use crate::timeseries::{CsvSchema, HeatingPeriodSpec};

/// Dates as TOML local dates (`2019-01-01`) or quoted strings.
pub mod toml_date {
    use chrono::NaiveDate;
    use serde::{Deserialize, Deserializer, Serializer};

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Text(String),
        Toml(toml::value::Datetime),
    }

    fn parse<E: serde::de::Error>(r: Repr) -> Result<NaiveDate, E> {
        let s = match r {
            Repr::Text(s) => s,
            Repr::Toml(d) => d.to_string(),
        };
        s.parse().map_err(|_| E::custom(format!("`{s}` is not a YYYY-MM-DD date")))
    }

    pub fn serialize<S: Serializer>(d: &NaiveDate, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(d)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<NaiveDate, D::Error> {
        parse(Repr::deserialize(d)?)
    }

    pub mod list {
        use super::*;

        pub fn serialize<S: Serializer>(v: &[NaiveDate], s: S) -> Result<S::Ok, S::Error> {
            s.collect_seq(v.iter().map(|d| d.to_string()))
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<NaiveDate>, D::Error> {
            Vec::<Repr>::deserialize(d)?.into_iter().map(parse).collect()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// CSV files, one building each. Ignored when `synthetic` is set.
    #[serde(default)]
    pub inputs: Vec<PathBuf>,
    #[serde(default)]
    pub schema: CsvSchema,
    #[serde(default)]
    pub synthetic: Option<SyntheticSpec>,
    /// Non-working weekdays.
    #[serde(default, with = "toml_date::list")]
    pub holidays: Vec<NaiveDate>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Span {
    #[serde(with = "toml_date")]
    pub start: NaiveDate,
    #[serde(with = "toml_date")]
    pub end: NaiveDate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Splits {
    pub train: Span,
    pub validation: Span,
    pub test: Span,
}

impl Default for Splits {
    fn default() -> Self {
        let d = |y, m, day| NaiveDate::from_ymd_opt(y, m, day).expect("valid date");
        Self {
            train: Span { start: d(2017, 1, 1), end: d(2017, 12, 31) },
            validation: Span { start: d(2018, 1, 1), end: d(2018, 12, 31) },
            test: Span { start: d(2019, 1, 1), end: d(2019, 12, 31) },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeatingConfig {
    /// `MM-DD`
    pub start: String,
    pub end: String,
}

impl Default for HeatingConfig {
    fn default() -> Self {
        Self { start: "09-01".into(), end: "05-31".into() }
    }
}

impl HeatingConfig {
    pub fn spec(&self) -> Result<HeatingPeriodSpec> {
        HeatingPeriodSpec::new(
            HeatingPeriodSpec::parse_month_day(&self.start)?,
            HeatingPeriodSpec::parse_month_day(&self.end)?,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub lasso: Vec<f64>,
    pub gam: Vec<f64>,
    pub gbr: Vec<usize>,
}

impl Default for GridConfig {
    fn default() -> Self {
        let lambdas = |m| {
            TuningGrid::default_for(m)
                .candidates
                .iter()
                .map(|c| match c {
                    Hyperparameter::Lambda(l) => *l,
                    Hyperparameter::Depth(d) => *d as f64,
                })
                .collect()
        };
        Self { lasso: lambdas(Method::Lasso), gam: lambdas(Method::Gam), gbr: vec![3, 4, 5, 6] }
    }
}

impl GridConfig {
    pub fn grid(&self, method: Method) -> Result<TuningGrid> {
        let candidates = match method {
            Method::Lasso => self.lasso.iter().map(|&l| Hyperparameter::Lambda(l)).collect(),
            Method::Gam => self.gam.iter().map(|&l| Hyperparameter::Lambda(l)).collect(),
            Method::Gbr => self.gbr.iter().map(|&d| Hyperparameter::Depth(d)).collect(),
        };
        TuningGrid::new(method, candidates)
    }
}

/// Cadence of the expensive refits. A value of `k` refits every `k`-th day
/// and reuses the fit in between; `1` is a daily refit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RuntimeConfig {
    pub retrain_every_days: usize,
    /// Tune on every `k`-th validation day.
    pub tune_stride_days: usize,
    pub combiner_refit_days: usize,
    pub gbqrt_refit_days: usize,
    /// Calendar days of ensemble history behind each combiner fit.
    pub combiner_window_days: usize,
    /// Limit on evaluated test days; 0 keeps all.
    pub max_test_days: usize,
    pub crps_samples: usize,
    /// Also write `timestamp, q01..q99` per model and building.
    pub write_quantiles: bool,
}

impl Default for RuntimeConfig {
    fn default() -> Self {
        Self {
            retrain_every_days: 1,
            tune_stride_days: 1,
            combiner_refit_days: 1,
            gbqrt_refit_days: 1,
            combiner_window_days: 365,
            max_test_days: 0,
            crps_samples: DEFAULT_CRPS_SAMPLES,
            write_quantiles: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub runs: usize,
    pub rate: f64,
    pub sweep: Vec<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self { runs: 30, rate: 0.05, sweep: DEFAULT_SWEEP.to_vec() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    #[serde(default = "default_seed")]
    pub master_seed: u64,
    pub data: DataConfig,
    #[serde(default)]
    pub splits: Splits,
    #[serde(default)]
    pub heating: HeatingConfig,
    /// Probabilistic models to run, by name.
    #[serde(default = "default_models")]
    pub models: Vec<String>,
    #[serde(default)]
    pub grids: GridConfig,
    #[serde(default)]
    pub gamlss: GamlssOptions,
    #[serde(default)]
    pub runtime: RuntimeConfig,
    #[serde(default)]
    pub experiment: ExperimentConfig,
}

fn default_seed() -> u64 {
    42
}

fn default_models() -> Vec<String> {
    CombinerKind::ALL.iter().map(|k| k.name().to_string()).collect()
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        // relative paths are relative to the config file
        let base = path.parent().unwrap_or(Path::new("."));
        for p in cfg.data.inputs.iter_mut().chain(std::iter::once(&mut cfg.output_dir)) {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn model_kinds(&self) -> Result<Vec<CombinerKind>> {
        let mut kinds = self.models.iter().map(|m| m.parse()).collect::<Result<Vec<CombinerKind>>>()?;
        kinds.sort();
        kinds.dedup();
        Ok(kinds)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        self.model_kinds()?;
        if self.models.is_empty() {
            return bad("no probabilistic models selected".into());
        }
        if self.data.synthetic.is_none() && self.data.inputs.is_empty() {
            return bad("data needs either `inputs` or a `synthetic` spec".into());
        }
        if let Some(s) = &self.data.synthetic {
            s.validate()?;
        }
        let s = &self.splits;
        for (name, span) in [("train", s.train), ("validation", s.validation), ("test", s.test)] {
            if span.start > span.end {
                return bad(format!("{name} span ends before it starts"));
            }
        }
        if !(s.train.end < s.validation.start && s.validation.end < s.test.start) {
            return bad("splits must be disjoint and ordered train < validation < test".into());
        }
        self.heating.spec()?;
        for m in Method::ALL {
            self.grids.grid(m)?;
        }
        let r = &self.runtime;
        if [r.retrain_every_days, r.tune_stride_days, r.combiner_refit_days, r.gbqrt_refit_days, r.combiner_window_days]
            .contains(&0)
        {
            return bad("runtime strides and the combiner window must be at least 1".into());
        }
        if r.crps_samples < 2 {
            return bad("crps_samples must be at least 2".into());
        }
        let e = &self.experiment;
        if e.runs == 0 || !(0.0 < e.rate && e.rate < 1.0) {
            return bad("experiment needs runs >= 1 and a rate in (0, 1)".into());
        }
        if e.sweep.is_empty() || e.sweep.iter().any(|t| !(0.0 < *t && *t < 0.5)) {
            return bad("sweep thresholds must lie in (0, 0.5)".into());
        }
        let g = &self.gamlss;
        if g.n_knots < 2 || g.max_iter == 0 || !(g.penalty >= 0.0) || !(g.tol > 0.0) {
            return bad("invalid GAMLSS options".into());
        }
        Ok(())
    }

    /// Hash of everything that affects numeric results (the output location
    /// is excluded).
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        let json = serde_json::to_string(&c).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))[..16].to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
output_dir = "out"
[data.synthetic]
n_buildings = 1
"#;

    #[test]
    fn defaults_and_hash() {
        let c = RunConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(c.master_seed, 42);
        assert_eq!(c.model_kinds().unwrap().len(), 6);
        assert_eq!(c.grids.gbr, vec![3, 4, 5, 6]);
        assert_eq!(c.grids.lasso.len(), 7);
        let dated = RunConfig::from_toml(&format!("{MINIMAL}\n[data]\nholidays = [2019-12-25, \"2019-12-26\"]\n[splits.test]\nstart = 2019-01-01\nend = \"2019-06-30\"")).unwrap();
        assert_eq!(dated.splits.test.end, NaiveDate::from_ymd_opt(2019, 6, 30).unwrap());
        assert_eq!(dated.data.holidays.len(), 2);
        assert_eq!(RunConfig::from_toml(&dated.to_toml().unwrap()).unwrap(), dated);
        let mut moved = c.clone();
        moved.output_dir = "elsewhere".into();
        assert_eq!(c.hash(), moved.hash());
        moved.master_seed = 1;
        assert_ne!(c.hash(), moved.hash());
        let back = RunConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn rejects_bad_configs() {
        let with = |extra: &str| RunConfig::from_toml(&format!("{MINIMAL}\n{extra}"));
        assert!(matches!(
            RunConfig::from_toml("output_dir = \"o\"\nmodels = [\"GAMLSS\", \"Prophet\"]\n[data.synthetic]\n"),
            Err(Error::Config(_))
        ));
        assert!(with("[runtime]\nretrain_every_days = 0").is_err());
        let overlap = "[splits.train]\nstart = 2018-01-01\nend = 2018-12-31\n[splits.validation]\nstart = 2018-06-01\nend = \"2018-12-31\"\n[splits.test]\nstart = 2019-01-01\nend = 2019-12-31";
        assert!(matches!(with(overlap), Err(Error::Config(m)) if m.contains("disjoint")));
        assert!(with("[experiment]\nsweep = [0.7]").is_err());
        assert!(with("[heating]\nstart = \"13-01\"\nend = \"05-31\"").is_err());
        assert!(with("unknown_key = 1").is_err());
        assert!(RunConfig::from_toml("output_dir = \"o\"\n[data]\n").is_err());
    }
}
