//! Seeded synthetic heat-load data for buildings sharing one weather record.

use std::f64::consts::PI;

use chrono::{Datelike, Duration, NaiveDate, Timelike, Weekday};
use rand::Rng;
use rand_distr::{Distribution, Normal, StudentT};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::hdh;
use crate::rng::substream;
use crate::timeseries::{LoadSeries, TimePoint};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum NoiseFamily {
    Gaussian,
    StudentT { nu: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_buildings: usize,
    #[serde(with = "crate::config::toml_date")]
    pub start: NaiveDate,
    pub years: usize,
    /// Weather-independent load (kW).
    pub base_load: f64,
    /// kW per heating degree hour.
    pub temp_sensitivity: f64,
    /// Relative amplitude of the daily cycle.
    pub daily_amplitude: f64,
    /// Relative load reduction on weekends.
    pub weekly_amplitude: f64,
    /// Relative extra load during working time.
    pub working_bump: f64,
    pub noise: NoiseFamily,
    /// Noise scale relative to the expected load.
    pub noise_scale: f64,
    /// Probability that a mild-weather hour has no heat demand at all.
    pub zero_load_prob: f64,
    /// Temperature above which an hour counts as mild.
    pub mild_temp: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_buildings: 2,
            start: NaiveDate::from_ymd_opt(2017, 1, 1).expect("valid date"),
            years: 3,
            base_load: 5.0,
            temp_sensitivity: 8.0,
            daily_amplitude: 0.2,
            weekly_amplitude: 0.15,
            working_bump: 0.1,
            noise: NoiseFamily::StudentT { nu: 5.0 },
            noise_scale: 0.15,
            zero_load_prob: 0.3,
            mild_temp: 16.0,
            seed: 42,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synthetic spec: {m}")));
        if self.n_buildings == 0 || self.years == 0 {
            return bad("need at least one building and one year");
        }
        if !(self.base_load >= 0.0 && self.temp_sensitivity >= 0.0 && self.noise_scale >= 0.0) {
            return bad("loads, sensitivity and noise scale must be nonnegative");
        }
        if !(0.0..=1.0).contains(&self.zero_load_prob) || !(0.0..1.0).contains(&self.weekly_amplitude) {
            return bad("probabilities and weekly amplitude must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.daily_amplitude) || self.working_bump < 0.0 {
            return bad("daily amplitude must lie in [0, 1) and the working bump be nonnegative");
        }
        if let NoiseFamily::StudentT { nu } = self.noise {
            if !(nu > 0.0) {
                return bad("t noise needs nu > 0");
            }
        }
        Ok(())
    }

    pub fn hours(&self) -> usize {
        let end = NaiveDate::from_ymd_opt(self.start.year() + self.years as i32, self.start.month(), self.start.day())
            .unwrap_or(self.start + Duration::days(365 * self.years as i64));
        (end - self.start).num_days() as usize * 24
    }
}

/// Seasonal sinusoid, a diurnal cycle and AR(1) anomalies.
fn temperatures(spec: &SyntheticSpec) -> Vec<f64> {
    let mut rng = substream(spec.seed, "synthetic/weather");
    let shock = Normal::new(0.0, 0.6).expect("valid normal");
    let t0 = spec.start.and_hms_opt(0, 0, 0).expect("midnight exists");
    let mut anomaly = 0.0;
    (0..spec.hours())
        .map(|h| {
            let ts = t0 + Duration::hours(h as i64);
            let doy = f64::from(ts.ordinal());
            let seasonal = 9.0 - 10.0 * (2.0 * PI * (doy - 20.0) / 365.25).cos();
            let diurnal = -3.0 * (2.0 * PI * (f64::from(ts.hour()) - 15.0) / 24.0).cos();
            anomaly = 0.97 * anomaly + shock.sample(&mut rng);
            seasonal + diurnal + anomaly
        })
        .collect()
}

fn noise_draw<R: Rng>(family: NoiseFamily, rng: &mut R) -> f64 {
    match family {
        NoiseFamily::Gaussian => rng.sample(rand_distr::StandardNormal),
        NoiseFamily::StudentT { nu } => StudentT::new(nu).expect("validated nu").sample(rng),
    }
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Vec<LoadSeries>> {
    spec.validate()?;
    let temps = temperatures(spec);
    let t0 = spec.start.and_hms_opt(0, 0, 0).expect("midnight exists");
    (0..spec.n_buildings)
        .map(|b| {
            let mut rng = substream(spec.seed, &format!("synthetic/building/{b}"));
            let size: f64 = rng.random_range(0.7..1.4);
            let sensitivity = spec.temp_sensitivity * size * rng.random_range(0.8..1.2);
            let base = spec.base_load * size;
            let day_shock = Normal::new(0.0, 0.4 * spec.noise_scale).expect("valid normal");
            let mut day_effect = 0.0;
            let points = temps
                .iter()
                .enumerate()
                .map(|(h, &temp)| {
                    let ts = t0 + Duration::hours(h as i64);
                    let hour = ts.hour();
                    if hour == 0 {
                        day_effect = 0.7 * day_effect + day_shock.sample(&mut rng);
                    }
                    let weekend = matches!(ts.weekday(), Weekday::Sat | Weekday::Sun);
                    let mut profile = 1.0 + spec.daily_amplitude * (2.0 * PI * (f64::from(hour) - 7.0) / 24.0).cos();
                    if weekend {
                        profile *= 1.0 - spec.weekly_amplitude;
                    } else if (8..18).contains(&hour) {
                        profile += spec.working_bump;
                    }
                    let expected = (base + sensitivity * hdh(temp)) * profile * (1.0 + day_effect);
                    let eps = noise_draw(spec.noise, &mut rng);
                    let off = rng.random_bool(spec.zero_load_prob);
                    let load = if temp > spec.mild_temp && off {
                        0.0
                    } else {
                        (expected + spec.noise_scale * expected * eps).max(0.0)
                    };
                    TimePoint::new(ts, Some(load), Some(temp))
                })
                .collect();
            LoadSeries::new(format!("building_{}", b + 1), points)
        })
        .collect()
}
