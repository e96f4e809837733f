//! L1-regularized linear regression by cyclic coordinate descent.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

pub const LASSO_TOL: f64 = 1e-7;
pub const LASSO_MAX_SWEEPS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoModel {
    pub column_names: Vec<String>,
    pub intercept: f64,
    /// Coefficients on the original feature scale.
    pub coefficients: Vec<f64>,
    pub lambda: f64,
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
    pub sweeps: usize,
}

/// Minimizes `(1/N) ||y - b0 - X b||^2 + lambda ||b||_1`.
///
/// Columns are centered and scaled for the descent; each standardized
/// coordinate carries penalty `lambda / scale_j`, so the minimizer is that of
/// the objective on the original scale. Zero-variance columns get coefficient 0.
pub fn fit_lasso(x: &FeatureMatrix, lambda: f64) -> Result<LassoModel> {
    let n = x.n_rows();
    let p = x.n_cols();
    if n < 2 {
        return Err(Error::InsufficientData {
            required: 2,
            actual: n,
        });
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidInput(format!("lambda must be >= 0, got {lambda}")));
    }
    if !x.has_target() {
        return Err(Error::InvalidInput("lasso fit needs a target".into()));
    }
    x.check_finite()?;

    let nf = n as f64;
    let mut means = vec![0.0; p];
    for i in 0..n {
        for (m, v) in means.iter_mut().zip(x.row(i)) {
            *m += v;
        }
    }
    means.iter_mut().for_each(|m| *m /= nf);
    // column-major standardized copy
    let mut z = vec![0.0; n * p];
    let mut scales = vec![0.0; p];
    for j in 0..p {
        let mut ss = 0.0;
        for i in 0..n {
            let v = x.row(i)[j] - means[j];
            z[j * n + i] = v;
            ss += v * v;
        }
        let s = (ss / nf).sqrt();
        let constant = s <= 1e-12 * (1.0 + means[j].abs());
        scales[j] = if constant { 0.0 } else { s };
        if !constant {
            z[j * n..(j + 1) * n].iter_mut().for_each(|v| *v /= s);
        }
    }

    let y_mean = x.target.iter().sum::<f64>() / nf;
    let yc: Vec<f64> = x.target.iter().map(|y| y - y_mean).collect();
    // covariance updates: grad[j] = z_j' r / N, kept current through the Gram matrix
    let col = |j: usize| &z[j * n..(j + 1) * n];
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(u, v)| u * v).sum::<f64>();
    let mut gram = vec![0.0; p * p];
    for j in 0..p {
        for k in 0..=j {
            let g = dot(col(j), col(k)) / nf;
            gram[j * p + k] = g;
            gram[k * p + j] = g;
        }
    }
    let mut grad: Vec<f64> = (0..p).map(|j| dot(col(j), &yc) / nf).collect();
    let mut gamma = vec![0.0; p];
    let mut sweeps = 0;
    while sweeps < LASSO_MAX_SWEEPS {
        sweeps += 1;
        let mut max_change: f64 = 0.0;
        for j in 0..p {
            if scales[j] == 0.0 {
                continue;
            }
            let old = gamma[j];
            let rho = grad[j] + gram[j * p + j] * old;
            let new = soft_threshold(rho, lambda / (2.0 * scales[j])) / gram[j * p + j];
            if new != old {
                let delta = new - old;
                grad.iter_mut().zip(&gram[j * p..(j + 1) * p]).for_each(|(g, c)| *g -= delta * c);
                gamma[j] = new;
                max_change = max_change.max(delta.abs());
            }
        }
        if max_change < LASSO_TOL {
            break;
        }
    }

    let coefficients: Vec<f64> = gamma
        .iter()
        .zip(&scales)
        .map(|(g, s)| if *s == 0.0 { 0.0 } else { g / s })
        .collect();
    let intercept = y_mean
        - coefficients
            .iter()
            .zip(&means)
            .map(|(b, m)| b * m)
            .sum::<f64>();
    Ok(LassoModel {
        column_names: x.column_names.clone(),
        intercept,
        coefficients,
        lambda,
        means,
        scales,
        sweeps,
    })
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

impl LassoModel {
    pub fn predict(&self, x: &FeatureMatrix) -> Result<Vec<f64>> {
        x.check_columns(&self.column_names)?;
        Ok((0..x.n_rows()).map(|i| self.predict_row(x.row(i))).collect())
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.intercept
            + row
                .iter()
                .zip(&self.coefficients)
                .map(|(v, b)| v * b)
                .sum::<f64>()
    }

    pub fn l1_norm(&self) -> f64 {
        self.coefficients.iter().map(|b| b.abs()).sum()
    }
}

pub fn predict_lasso(model: &LassoModel, x: &FeatureMatrix) -> Result<Vec<f64>> {
    model.predict(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{ols_oracle, random_design};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn lambda_zero_matches_ols() {
        let x = random_design(300, 6, 1);
        let model = fit_lasso(&x, 0.0).unwrap();
        let (b0, b) = ols_oracle(&x);
        assert!((model.intercept - b0).abs() < 1e-6);
        for (a, e) in model.coefficients.iter().zip(&b) {
            assert!((a - e).abs() < 1e-6, "{a} vs {e}");
        }
        // in-sample prediction equals the OLS fit
        let pred = model.predict(&x).unwrap();
        for i in 0..x.n_rows() {
            let ols = b0 + x.row(i).iter().zip(&b).map(|(v, c)| v * c).sum::<f64>();
            assert!((pred[i] - ols).abs() < 1e-5);
        }
    }

    #[test]
    fn huge_lambda_shrinks_everything() {
        let x = random_design(100, 5, 2);
        let m = fit_lasso(&x, 1e12).unwrap();
        assert!(m.coefficients.iter().all(|&b| b == 0.0));
        let mean = x.target.iter().sum::<f64>() / 100.0;
        assert!((m.intercept - mean).abs() < 1e-9);
        let pred = m.predict(&x).unwrap();
        assert!(pred.iter().all(|&v| (v - m.intercept).abs() < 1e-12));
    }

    #[test]
    fn recovers_relevant_column() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 400;
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for _ in 0..n {
            let r: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            y.push(-3.0 * r[2] + 1.0);
            rows.push(r);
        }
        let names = (0..4).map(|j| format!("x{j}")).collect();
        let x = FeatureMatrix::from_rows(names, &rows, y).unwrap();
        let m = fit_lasso(&x, 0.1).unwrap();
        assert!(m.coefficients[2] < -2.0);
        for j in [0, 1, 3] {
            assert!(m.coefficients[j].abs() < 0.05);
        }
    }

    #[test]
    fn constant_column_gets_zero() {
        let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, 5.0]).collect();
        let y: Vec<f64> = (0..20).map(|i| 2.0 * i as f64).collect();
        let x = FeatureMatrix::from_rows(vec!["a".into(), "c".into()], &rows, y).unwrap();
        let m = fit_lasso(&x, 0.0).unwrap();
        assert_eq!(m.coefficients[1], 0.0);
        assert!((m.coefficients[0] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn rejects_bad_input() {
        let rows = vec![vec![1.0], vec![f64::NAN]];
        let x = FeatureMatrix::from_rows(vec!["a".into()], &rows, vec![1.0, 2.0]).unwrap();
        assert!(fit_lasso(&x, 0.0).is_err());
        let x = FeatureMatrix::from_rows(vec!["a".into()], &[vec![1.0]], vec![1.0]).unwrap();
        assert!(fit_lasso(&x, 0.0).is_err());
    }

    #[test]
    fn predict_checks_columns() {
        let x = random_design(20, 2, 3);
        let m = fit_lasso(&x, 0.0).unwrap();
        let other = FeatureMatrix::from_rows(vec!["q".into(), "r".into()], &[vec![0.0, 0.0]], vec![]).unwrap();
        assert!(matches!(m.predict(&other), Err(Error::ColumnMismatch { .. })));
    }

    #[test]
    fn identity_model_returns_feature() {
        let m = LassoModel {
            column_names: vec!["a".into()],
            intercept: 0.0,
            coefficients: vec![1.0],
            lambda: 0.0,
            means: vec![0.0],
            scales: vec![1.0],
            sweeps: 0,
        };
        let x = FeatureMatrix::from_rows(vec!["a".into()], &[vec![3.5], vec![-1.0]], vec![]).unwrap();
        assert_eq!(m.predict(&x).unwrap(), vec![3.5, -1.0]);
    }
}
