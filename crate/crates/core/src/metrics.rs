//! Point and probabilistic forecast scores, PIT histograms and ROC curves.

use rand::distr::Open01;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::distributions::PredictiveDistribution;
use crate::error::{Error, Result};
use crate::special::{norm_cdf, norm_pdf};

pub const DEFAULT_CRPS_SAMPLES: usize = 1000;
pub const PIT_BINS: usize = 10;

/// Default lower thresholds; the upper threshold is always `1 - tau_lower`.
pub const DEFAULT_SWEEP: [f64; 10] = [0.001, 0.0025, 0.005, 0.01, 0.025, 0.05, 0.1, 0.15, 0.2, 0.25];

fn check_pair(y: &[f64], yhat: &[f64]) -> Result<()> {
    if y.is_empty() {
        return Err(Error::InvalidInput("cannot score an empty series".into()));
    }
    if y.len() != yhat.len() {
        return Err(Error::InvalidInput(format!(
            "length mismatch: {} observations, {} forecasts",
            y.len(),
            yhat.len()
        )));
    }
    Ok(())
}

/// Mean absolute error of forecasts clipped at zero.
pub fn mae(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_pair(y, yhat)?;
    let s: f64 = y.iter().zip(yhat).map(|(a, b)| (a - b.max(0.0)).abs()).sum();
    Ok(s / y.len() as f64)
}

/// Root mean squared error of forecasts clipped at zero.
pub fn rmse(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_pair(y, yhat)?;
    let s: f64 = y.iter().zip(yhat).map(|(a, b)| (a - b.max(0.0)).powi(2)).sum();
    Ok((s / y.len() as f64).sqrt())
}

pub fn crps_gaussian_closed(mu: f64, sigma: f64, y: f64) -> f64 {
    if sigma <= 0.0 {
        return (y - mu).abs();
    }
    let z = (y - mu) / sigma;
    sigma * (z * (2.0 * norm_cdf(z) - 1.0) + 2.0 * norm_pdf(z) - 1.0 / std::f64::consts::PI.sqrt())
}

/// Sample CRPS `mean|X - y| - mean|X - X'| / 2`. Sorts `samples` in place.
pub fn crps_from_samples(samples: &mut [f64], y: f64) -> f64 {
    let s = samples.len();
    samples.sort_by(f64::total_cmp);
    let sf = s as f64;
    let mut abs_dev = 0.0;
    let mut pair = 0.0;
    for (i, &x) in samples.iter().enumerate() {
        abs_dev += (x - y).abs();
        // sum_{i,j} |x_i - x_j| = 2 sum_i (2i - S + 1) x_(i)
        pair += (2.0 * i as f64 - sf + 1.0) * x;
    }
    abs_dev / sf - pair / (sf * sf)
}

/// One uniform draw inside each of the `s` equal cells of (0, 1).
pub fn stratified_uniforms<R: Rng + ?Sized>(s: usize, rng: &mut R) -> Vec<f64> {
    let sf = s as f64;
    (0..s)
        .map(|i| {
            let u: f64 = rng.sample(Open01);
            ((i as f64 + u) / sf).min(1.0 - f64::EPSILON / 2.0)
        })
        .collect()
}

/// Sample CRPS from `s` stratified inverse-CDF draws of `dist`.
pub fn crps_sample<R: Rng + ?Sized>(
    dist: &PredictiveDistribution,
    y: f64,
    s: usize,
    rng: &mut R,
) -> Result<f64> {
    if s < 2 {
        return Err(Error::InvalidInput(format!("CRPS needs at least 2 samples, got {s}")));
    }
    let mut draws = stratified_uniforms(s, rng)
        .into_iter()
        .map(|u| dist.quantile(u))
        .collect::<Result<Vec<_>>>()?;
    Ok(crps_from_samples(&mut draws, y))
}

/// Probability integral transform, randomized across the point mass at zero.
pub fn pit<R: Rng + ?Sized>(dist: &PredictiveDistribution, y: f64, rng: &mut R) -> Result<f64> {
    if y < 0.0 || !y.is_finite() {
        return Err(Error::InvalidInput(format!("PIT needs a finite y >= 0, got {y}")));
    }
    let f = dist.cdf(y);
    if y == 0.0 && f > 0.0 {
        let u: f64 = rng.random();
        return Ok(u * f);
    }
    Ok(f)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PitHistogram {
    pub bin_edges: Vec<f64>,
    pub bin_frequencies: Vec<f64>,
}

impl PitHistogram {
    pub fn from_values(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidInput("PIT histogram of no values".into()));
        }
        let mut counts = [0usize; PIT_BINS];
        for &v in values {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidInput(format!("PIT value {v} outside [0, 1]")));
            }
            let b = ((v * PIT_BINS as f64) as usize).min(PIT_BINS - 1);
            counts[b] += 1;
        }
        let n = values.len() as f64;
        Ok(Self {
            bin_edges: (0..=PIT_BINS).map(|k| k as f64 / PIT_BINS as f64).collect(),
            bin_frequencies: counts.iter().map(|&c| c as f64 / n).collect(),
        })
    }
}

/// Largest gap between the empirical CDF of `sample` and `cdf`.
pub fn kolmogorov_distance(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut xs = sample.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    let mut i = 0;
    while i < xs.len() {
        let x = xs[i];
        let mut j = i;
        while j < xs.len() && xs[j] == x {
            j += 1;
        }
        let f = cdf(x);
        // left limit of the model CDF is approximated by its value just below x
        let f_left = cdf(x - 1e-12 * x.abs().max(1.0));
        d = d.max((f_left - i as f64 / n).abs()).max((f - j as f64 / n).abs());
        i = j;
    }
    d
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn from_flags(flags: &[bool], truth: &[bool]) -> Result<Self> {
        if flags.len() != truth.len() {
            return Err(Error::InvalidInput("flags and labels differ in length".into()));
        }
        let mut c = Confusion::default();
        for (&f, &t) in flags.iter().zip(truth) {
            match (f, t) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn tpr(&self) -> Result<f64> {
        let p = self.tp + self.fn_;
        if p == 0 {
            return Err(Error::InvalidInput("TPR undefined without positives".into()));
        }
        Ok(self.tp as f64 / p as f64)
    }

    /// 0 when there are no negatives.
    pub fn fpr(&self) -> f64 {
        let n = self.fp + self.tn;
        if n == 0 {
            0.0
        } else {
            self.fp as f64 / n as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub tau_lower: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
}

impl RocCurve {
    /// TPR at `fpr` by linear interpolation, anchored at (0,0) and (1,1).
    pub fn tpr_at(&self, fpr: f64) -> f64 {
        let mut pts: Vec<(f64, f64)> = self.points.iter().map(|p| (p.fpr, p.tpr)).collect();
        pts.push((0.0, 0.0));
        pts.push((1.0, 1.0));
        pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        let k = pts.partition_point(|p| p.0 < fpr);
        if k == 0 {
            return pts[0].1;
        }
        if k == pts.len() {
            return pts[pts.len() - 1].1;
        }
        let (x0, y0) = pts[k - 1];
        let (x1, y1) = pts[k];
        if x1 == fpr {
            // several points may share this fpr; take the best
            return pts[k..].iter().take_while(|p| p.0 == fpr).map(|p| p.1).fold(y1, f64::max);
        }
        y0 + (y1 - y0) * (fpr - x0) / (x1 - x0)
    }
}

/// One ROC point per threshold from per-threshold flag vectors.
pub fn roc(flags: &[Vec<bool>], truth: &[bool], tau_lower: &[f64]) -> Result<RocCurve> {
    if flags.is_empty() || flags.len() != tau_lower.len() {
        return Err(Error::InvalidInput("need one flag vector per threshold".into()));
    }
    let mut points = Vec::with_capacity(flags.len());
    for (f, &tau) in flags.iter().zip(tau_lower) {
        let c = Confusion::from_flags(f, truth)?;
        points.push(RocPoint {
            tau_lower: tau,
            fpr: c.fpr(),
            tpr: c.tpr()?,
        });
    }
    Ok(RocCurve { points })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::{QuantileCdf, ZeroMassGaussian};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn brute_crps(samples: &[f64], y: f64) -> f64 {
        let s = samples.len() as f64;
        let a: f64 = samples.iter().map(|x| (x - y).abs()).sum::<f64>() / s;
        let mut b = 0.0;
        for x in samples {
            for z in samples {
                b += (x - z).abs();
            }
        }
        a - b / (2.0 * s * s)
    }

    #[test]
    fn point_scores() {
        assert_eq!(mae(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mae(&[0.0, 2.0], &[-1.0, 3.0]).unwrap(), 0.5);
        assert!((rmse(&[0.0, 2.0], &[-1.0, 3.0]).unwrap() - 0.5f64.sqrt()).abs() < 1e-15);
        assert!((mae(&[5.0, 6.0], &[7.0, 8.0]).unwrap() - 2.0).abs() < 1e-15);
        assert!(mae(&[], &[]).is_err());
        assert!(rmse(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn sorted_crps_matches_quadratic_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let xs: Vec<f64> = (0..200).map(|_| rng.random_range(-3.0..5.0)).collect();
        for &y in &[-4.0, 0.0, 1.3, 9.0] {
            let fast = crps_from_samples(&mut xs.clone(), y);
            assert!((fast - brute_crps(&xs, y)).abs() < 1e-12);
        }
        // point mass collapses to absolute error
        assert!((crps_from_samples(&mut vec![2.5; 10], 4.0) - 1.5).abs() < 1e-15);
    }

    #[test]
    fn closed_form_gaussian() {
        let at_mean = 2.0 * norm_pdf(0.0) - 1.0 / std::f64::consts::PI.sqrt();
        assert!((crps_gaussian_closed(0.0, 1.0, 0.0) - 0.233_694_977_255_109_1).abs() < 1e-12);
        assert!((crps_gaussian_closed(3.0, 2.0, 3.0) - 2.0 * at_mean).abs() < 1e-14);
        assert!((crps_gaussian_closed(1.0, 1e-12, 4.0) - 3.0).abs() < 1e-9);
        assert!((crps_gaussian_closed(1.0, 2.0, 2.5) - crps_gaussian_closed(1.0, 2.0, -0.5)).abs() < 1e-14);
    }

    #[test]
    fn sample_crps_is_translation_invariant() {
        let a: PredictiveDistribution = ZeroMassGaussian::new(50.0, 3.0).unwrap().into();
        let b: PredictiveDistribution = ZeroMassGaussian::new(60.0, 3.0).unwrap().into();
        let ca = crps_sample(&a, 52.0, 1000, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let cb = crps_sample(&b, 62.0, 1000, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert!((ca - cb).abs() < 1e-9);
        assert!(crps_sample(&a, 1.0, 1, &mut ChaCha8Rng::seed_from_u64(9)).is_err());
    }

    #[test]
    fn sample_crps_close_to_closed_form() {
        // far from zero the censoring is negligible
        let d: PredictiveDistribution = ZeroMassGaussian::new(100.0, 10.0).unwrap().into();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for y in [80.0, 95.0, 100.0, 110.0, 120.0] {
            let est = crps_sample(&d, y, 1000, &mut rng).unwrap();
            let exact = crps_gaussian_closed(100.0, 10.0, y);
            assert!((est - exact).abs() / exact < 0.01, "{est} vs {exact}");
        }
    }

    #[test]
    fn stratified_uniforms_fill_cells() {
        let u = stratified_uniforms(50, &mut ChaCha8Rng::seed_from_u64(1));
        for (i, v) in u.iter().enumerate() {
            assert!(*v > i as f64 / 50.0 && *v < (i + 1) as f64 / 50.0);
        }
    }

    #[test]
    fn pit_rules() {
        let d: PredictiveDistribution = ZeroMassGaussian::new(10.0, 2.0).unwrap().into();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!((pit(&d, 10.0, &mut rng).unwrap() - 0.5).abs() < 1e-15);
        let z: PredictiveDistribution = ZeroMassGaussian::new(0.2533471031357997, 1.0).unwrap().into();
        let f0 = z.cdf(0.0);
        assert!((f0 - 0.4).abs() < 1e-9);
        for _ in 0..100 {
            let v = pit(&z, 0.0, &mut rng).unwrap();
            assert!((0.0..=f0).contains(&v));
        }
        assert!(pit(&d, -1.0, &mut rng).is_err());
    }

    #[test]
    fn histogram_sums_to_one() {
        let h = PitHistogram::from_values(&[0.0, 0.05, 0.5, 0.99, 1.0]).unwrap();
        assert_eq!(h.bin_edges.len(), 11);
        assert!((h.bin_frequencies.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(h.bin_frequencies[0], 0.4);
        assert_eq!(h.bin_frequencies[9], 0.4);
        assert!(PitHistogram::from_values(&[1.2]).is_err());
    }

    #[test]
    fn kolmogorov_distance_basics() {
        let xs: Vec<f64> = (0..100).map(|i| (i as f64 + 0.5) / 100.0).collect();
        let d = kolmogorov_distance(&xs, |x| x.clamp(0.0, 1.0));
        assert!((d - 0.005).abs() < 1e-9);
        // a point mass is matched exactly by a step CDF
        let d = kolmogorov_distance(&[0.0; 10], |x| if x >= 0.0 { 1.0 } else { 0.0 });
        assert!(d < 1e-12);
    }

    #[test]
    fn roc_extremes() {
        let truth = [true, false, true, false];
        let perfect = vec![true, false, true, false];
        let all = vec![true; 4];
        let none = vec![false; 4];
        let c = roc(&[perfect, all, none], &truth, &[0.05, 0.5, 0.0001]).unwrap();
        assert_eq!((c.points[0].fpr, c.points[0].tpr), (0.0, 1.0));
        assert_eq!((c.points[1].fpr, c.points[1].tpr), (1.0, 1.0));
        assert_eq!((c.points[2].fpr, c.points[2].tpr), (0.0, 0.0));
        assert!(roc(&[vec![true]], &[false], &[0.1]).is_err());
    }

    #[test]
    fn roc_interpolation() {
        let c = RocCurve {
            points: vec![
                RocPoint { tau_lower: 0.01, fpr: 0.02, tpr: 0.4 },
                RocPoint { tau_lower: 0.05, fpr: 0.2, tpr: 0.8 },
            ],
        };
        assert!((c.tpr_at(0.11) - 0.6).abs() < 1e-12);
        assert!((c.tpr_at(0.01) - 0.2).abs() < 1e-12);
        assert!((c.tpr_at(0.6) - 0.9).abs() < 1e-12);
    }

    #[test]
    fn quantile_cdf_pit_is_uniform_for_its_own_draws() {
        let q: PredictiveDistribution =
            QuantileCdf::from_quantiles((1..=99).map(|k| 5.0 + k as f64).collect()).unwrap().into();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ys = q.sample(10_000, &mut rng);
        let p: Vec<f64> = ys.iter().map(|&y| pit(&q, y, &mut rng).unwrap()).collect();
        assert!(kolmogorov_distance(&p, |x| x.clamp(0.0, 1.0)) < 0.05);
    }
}
