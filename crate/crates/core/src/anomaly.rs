//! Threshold rule on the predictive CDF, artificial anomaly injection and the
//! repeated injection experiment.

use std::io::Write;

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::PredictiveDistribution;
use crate::error::{Error, Result};
use crate::metrics::{Confusion, RocCurve, RocPoint};
use crate::rng::substream;

pub const DEFAULT_RATE: f64 = 0.05;
pub const DEFAULT_RUNS: usize = 30;
/// Relative size of an injected deviation, also its floor relative to the mean load.
pub const DEVIATION: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub tau_lower: f64,
    pub tau_upper: f64,
}

impl DetectorConfig {
    pub fn new(tau_lower: f64, tau_upper: f64) -> Result<Self> {
        if !(0.0 < tau_lower && tau_lower < tau_upper && tau_upper < 1.0) {
            return Err(Error::Config(format!(
                "thresholds must satisfy 0 < lower < upper < 1, got ({tau_lower}, {tau_upper})"
            )));
        }
        Ok(Self { tau_lower, tau_upper })
    }

    /// Central interval `[tau_lower, 1 - tau_lower]`.
    pub fn symmetric(tau_lower: f64) -> Result<Self> {
        Self::new(tau_lower, 1.0 - tau_lower)
    }

    pub fn flags(&self, cdf_value: f64) -> bool {
        cdf_value < self.tau_lower || cdf_value > self.tau_upper
    }
}

pub fn classify(dist: &PredictiveDistribution, y: f64, config: &DetectorConfig) -> bool {
    config.flags(dist.cdf(y))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyInjection {
    /// Indices into the injected slice, ascending.
    pub positions: Vec<usize>,
    pub original: Vec<f64>,
    pub injected: Vec<f64>,
    pub directions: Vec<i8>,
}

impl AnomalyInjection {
    pub fn truth(&self, n: usize) -> Vec<bool> {
        let mut t = vec![false; n];
        for &p in &self.positions {
            t[p] = true;
        }
        t
    }
}

/// Replaces `round(rate * N)` values drawn without replacement by deviations
/// of `max(0.2 y, 0.2 mean)` in a random direction; a deviation that would
/// turn negative goes upwards instead.
pub fn inject<R: Rng + ?Sized>(values: &[f64], rate: f64, rng: &mut R) -> Result<(Vec<f64>, AnomalyInjection)> {
    if values.is_empty() {
        return Err(Error::InvalidInput("nothing to inject into".into()));
    }
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::Config(format!("injection rate must lie in [0, 1], got {rate}")));
    }
    if let Some(v) = values.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
        return Err(Error::InvalidInput(format!("invalid observed load {v}")));
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let count = (rate * n as f64).round() as usize;
    let mut positions = index::sample(rng, n, count).into_vec();
    positions.sort_unstable();
    let mut out = values.to_vec();
    let mut inj = AnomalyInjection {
        positions: Vec::with_capacity(count),
        original: Vec::with_capacity(count),
        injected: Vec::with_capacity(count),
        directions: Vec::with_capacity(count),
    };
    for p in positions {
        let y = values[p];
        let m = (DEVIATION * y).max(DEVIATION * mean);
        let mut d: i8 = if rng.random_bool(0.5) { 1 } else { -1 };
        let mut v = y + f64::from(d) * m;
        if v < 0.0 {
            d = 1;
            v = y + m;
        }
        out[p] = v;
        inj.positions.push(p);
        inj.original.push(y);
        inj.injected.push(v);
        inj.directions.push(d);
    }
    Ok((out, inj))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionOutcome {
    pub flags: Vec<bool>,
    pub confusion: Confusion,
    pub tpr: f64,
    pub fpr: f64,
}

impl DetectionOutcome {
    pub fn new(flags: Vec<bool>, truth: &[bool]) -> Result<Self> {
        let confusion = Confusion::from_flags(&flags, truth)?;
        Ok(Self {
            tpr: confusion.tpr()?,
            fpr: confusion.fpr(),
            flags,
            confusion,
        })
    }
}

/// Classifies `observed` against `dists` hour by hour.
pub fn detect(dists: &[PredictiveDistribution], observed: &[f64], config: &DetectorConfig) -> Result<Vec<bool>> {
    if dists.len() != observed.len() {
        return Err(Error::InvalidInput(format!(
            "{} distributions for {} observations",
            dists.len(),
            observed.len()
        )));
    }
    Ok(dists.iter().zip(observed).map(|(d, &y)| classify(d, y, config)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run: usize,
    pub tau_lower: f64,
    pub confusion: Confusion,
    pub tpr: f64,
    pub fpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub runs: Vec<RunRecord>,
    /// Mean TPR and FPR over runs per threshold.
    pub averaged: RocCurve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub runs: usize,
    pub rate: f64,
    pub sweep: Vec<f64>,
    pub seed: u64,
}

/// Repeats injection and detection; run `r` draws from substream `injection/r`.
pub fn run_experiment(
    dists: &[PredictiveDistribution],
    observed: &[f64],
    spec: &ExperimentSpec,
) -> Result<ExperimentResult> {
    if dists.len() != observed.len() {
        return Err(Error::InvalidInput(format!(
            "{} distributions for {} observations",
            dists.len(),
            observed.len()
        )));
    }
    if spec.runs == 0 || spec.sweep.is_empty() {
        return Err(Error::Config("experiment needs at least one run and one threshold".into()));
    }
    let configs = spec
        .sweep
        .iter()
        .map(|&t| DetectorConfig::symmetric(t))
        .collect::<Result<Vec<_>>>()?;
    let per_run = (0..spec.runs)
        .into_par_iter()
        .map(|run| {
            let mut rng = substream(spec.seed, &format!("injection/{run}"));
            let (values, inj) = inject(observed, spec.rate, &mut rng)?;
            let truth = inj.truth(values.len());
            let cdf: Vec<f64> = dists.iter().zip(&values).map(|(d, &y)| d.cdf(y)).collect();
            configs
                .iter()
                .map(|c| {
                    let flags: Vec<bool> = cdf.iter().map(|&p| c.flags(p)).collect();
                    let o = DetectionOutcome::new(flags, &truth)?;
                    Ok(RunRecord {
                        run,
                        tau_lower: c.tau_lower,
                        confusion: o.confusion,
                        tpr: o.tpr,
                        fpr: o.fpr,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let runs: Vec<RunRecord> = per_run.into_iter().flatten().collect();
    let k = spec.sweep.len();
    let points = (0..k)
        .map(|j| {
            let recs = runs.iter().skip(j).step_by(k);
            let (tpr, fpr) = recs.fold((0.0, 0.0), |(a, b), r| (a + r.tpr, b + r.fpr));
            RocPoint {
                tau_lower: spec.sweep[j],
                tpr: tpr / spec.runs as f64,
                fpr: fpr / spec.runs as f64,
            }
        })
        .collect();
    Ok(ExperimentResult {
        runs,
        averaged: RocCurve { points },
    })
}

/// `run, tau_lower, TP, FP, FN, TN, TPR, FPR`
pub fn write_runs_csv<W: Write>(writer: W, comments: &[String], runs: &[RunRecord]) -> Result<()> {
    let mut writer = writer;
    for c in comments {
        writeln!(writer, "# {c}").map_err(|e| Error::io("experiment csv", e))?;
    }
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["run", "tau_lower", "TP", "FP", "FN", "TN", "TPR", "FPR"])?;
    for r in runs {
        let c = &r.confusion;
        w.write_record([
            r.run.to_string(),
            r.tau_lower.to_string(),
            c.tp.to_string(),
            c.fp.to_string(),
            c.fn_.to_string(),
            c.tn.to_string(),
            r.tpr.to_string(),
            r.fpr.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("experiment csv", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::{QuantileCdf, ZeroMassGaussian};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn eq1_boundaries() {
        let c = DetectorConfig::new(0.01, 0.99).unwrap();
        assert!(c.flags(0.005));
        assert!(!DetectorConfig::new(0.05, 0.95).unwrap().flags(0.5));
        assert!(!DetectorConfig::new(0.05, 0.95).unwrap().flags(0.95));
        assert!(!c.flags(0.01));
        assert!(DetectorConfig::new(0.5, 0.4).is_err());
        assert!(DetectorConfig::symmetric(0.6).is_err());
        let d: PredictiveDistribution = ZeroMassGaussian::new(100.0, 1.0).unwrap().into();
        assert!(classify(&d, 90.0, &c));
        assert!(!classify(&d, 100.0, &c));
    }

    #[test]
    fn deviation_rule_arithmetic() {
        // mean 100: y=10 gets m=20, y=200 gets m=40
        let values = [10.0, 200.0, 90.0];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..200 {
            let (out, inj) = inject(&values, 1.0, &mut rng).unwrap();
            assert_eq!(inj.positions, vec![0, 1, 2]);
            assert_eq!(out[0], 30.0);
            assert!(out[1] == 240.0 || out[1] == 160.0);
            assert!(out[2] == 110.0 || out[2] == 70.0);
            assert_eq!(inj.directions[0], 1);
        }
    }

    #[test]
    fn injection_contract() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let values: Vec<f64> = (0..5000).map(|_| rng.random_range(0.0..300.0)).collect();
        let mean = values.iter().sum::<f64>() / 5000.0;
        for run in 0..30 {
            let (out, inj) = inject(&values, DEFAULT_RATE, &mut substream(9, &format!("injection/{run}"))).unwrap();
            assert_eq!(inj.positions.len(), 250);
            assert!(out.iter().all(|v| *v >= 0.0));
            for (&p, (&o, &v)) in inj.positions.iter().zip(inj.original.iter().zip(&inj.injected)) {
                assert_eq!(values[p], o);
                assert!((v - o).abs() >= 0.2 * mean - 1e-12);
            }
            let changed = out.iter().zip(&values).filter(|(a, b)| a != b).count();
            assert_eq!(changed, 250);
        }
    }

    fn calibrated(n: usize, seed: u64) -> (Vec<PredictiveDistribution>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut dists = Vec::new();
        let mut ys = Vec::new();
        for _ in 0..n {
            let mu = rng.random_range(100.0..200.0);
            let sigma = rng.random_range(5.0..15.0);
            ys.push(Normal::new(mu, sigma).unwrap().sample(&mut rng));
            dists.push(ZeroMassGaussian::new(mu, sigma).unwrap().into());
        }
        (dists, ys)
    }

    #[test]
    fn calibrated_fpr_is_twice_tau() {
        let (dists, ys) = calibrated(5000, 2);
        for tau in [0.01, 0.05] {
            let flags = detect(&dists, &ys, &DetectorConfig::symmetric(tau).unwrap()).unwrap();
            let fpr = flags.iter().filter(|f| **f).count() as f64 / ys.len() as f64;
            assert!((fpr - 2.0 * tau).abs() <= 0.01, "tau {tau}: {fpr}");
        }
    }

    #[test]
    fn oracle_and_random_guess() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ys: Vec<f64> = (0..2000).map(|_| rng.random_range(100.0..200.0)).collect();
        let oracle: Vec<PredictiveDistribution> =
            ys.iter().map(|&y| ZeroMassGaussian::new(y, 1e-3).unwrap().into()).collect();
        let spec = ExperimentSpec { runs: 5, rate: 0.05, sweep: vec![0.01, 0.1], seed: 4 };
        let res = run_experiment(&oracle, &ys, &spec).unwrap();
        for p in &res.averaged.points {
            assert_eq!((p.tpr, p.fpr), (1.0, 0.0));
        }
        // a CDF that is uniform far beyond the data range
        let flat = QuantileCdf::new(
            crate::distributions::quantile_levels(),
            crate::distributions::quantile_levels().iter().map(|l| l * 1e6).collect(),
        )
        .unwrap();
        let guess: Vec<PredictiveDistribution> = ys.iter().map(|_| flat.clone().into()).collect();
        let spec = ExperimentSpec { runs: 5, rate: 0.05, sweep: vec![0.001, 0.1, 0.25], seed: 4 };
        let res = run_experiment(&guess, &ys, &spec).unwrap();
        for p in &res.averaged.points {
            assert!((p.tpr - p.fpr).abs() < 0.05, "{p:?}");
        }
    }

    #[test]
    fn monotone_in_threshold_and_deterministic() {
        let (dists, ys) = calibrated(3000, 5);
        let spec = ExperimentSpec {
            runs: 4,
            rate: 0.05,
            sweep: crate::metrics::DEFAULT_SWEEP.to_vec(),
            seed: 11,
        };
        let a = run_experiment(&dists, &ys, &spec).unwrap();
        let b = run_experiment(&dists, &ys, &spec).unwrap();
        assert_eq!(a, b);
        for run in 0..4 {
            let recs: Vec<&RunRecord> = a.runs.iter().filter(|r| r.run == run).collect();
            assert!(recs.windows(2).all(|w| w[1].tpr >= w[0].tpr && w[1].fpr >= w[0].fpr));
            assert!(recs.iter().all(|r| r.confusion.total() == 3000));
        }
        let mut buf = Vec::new();
        write_runs_csv(&mut buf, &["seed=11".into()], &a.runs).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().nth(1), Some("run,tau_lower,TP,FP,FN,TN,TPR,FPR"));
        assert_eq!(text.lines().count(), 2 + 40);
    }
}
