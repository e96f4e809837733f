//! Quantile regression averaging: one linear quantile regression on the
//! member forecasts per level.
//!
//! Each regression is solved exactly as a linear program. A primal-dual
//! interior point method (Frisch-Newton, Mehrotra predictor-corrector) runs
//! on the bounded dual `max y'a  s.t.  X'a = (1 - tau) X'1, 0 <= a <= 1`,
//! whose multipliers are the coefficients. The interior solution is then
//! snapped to the optimal vertex interpolating `p` observations.

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::backtest::EnsembleForecast;
use crate::combiners::CombinerWindow;
use crate::distributions::{quantile_levels, QuantileCdf};
use crate::error::{Error, Result};

const STEP_FRACTION: f64 = 0.9995;
const MAX_ITER: usize = 100;
const GAP_TOL: f64 = 1e-10;
const LOOSE_GAP_TOL: f64 = 1e-6;
const COLLINEAR_TOL: f64 = 1e-8;

pub fn pinball(u: f64, tau: f64) -> f64 {
    if u < 0.0 {
        (tau - 1.0) * u
    } else {
        tau * u
    }
}

/// Minimum training pairs: 30 per parameter of the mean/scale model.
pub fn min_window(n_members: usize) -> usize {
    30 * (n_members + 2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QraCombiner {
    pub levels: Vec<f64>,
    /// Per level `[beta_0, beta_1, ..., beta_M]`.
    pub coefficients: Vec<Vec<f64>>,
}

pub fn fit_qra(window: &CombinerWindow) -> Result<QraCombiner> {
    let m = window.n_members();
    let need = min_window(m);
    if window.len() < need {
        return Err(Error::InsufficientData {
            required: need,
            actual: window.len(),
        });
    }
    let columns: Vec<Vec<f64>> = (0..m)
        .map(|j| window.forecasts.iter().map(|f| f.members[j]).collect())
        .collect();
    let levels = quantile_levels();
    let design = Design::new(&columns, &window.observed)?;
    let coefficients = levels
        .iter()
        .map(|&tau| design.solve(tau))
        .collect::<Result<Vec<_>>>()?;
    Ok(QraCombiner { levels, coefficients })
}

impl QraCombiner {
    /// Raw (unsorted, unclipped) quantiles.
    pub fn raw_quantiles(&self, members: &[f64]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.levels.len());
        for b in &self.coefficients {
            if b.len() != members.len() + 1 {
                return Err(Error::InvalidInput(format!(
                    "model has {} members, forecast has {}",
                    b.len() - 1,
                    members.len()
                )));
            }
            out.push(b[0] + b[1..].iter().zip(members).map(|(c, x)| c * x).sum::<f64>());
        }
        Ok(out)
    }

    pub fn predict(&self, ens: &EnsembleForecast) -> Result<QuantileCdf> {
        QuantileCdf::new(self.levels.clone(), self.raw_quantiles(&ens.members)?)
    }
}

/// Linear quantile regression of `y` on `columns` plus an intercept.
/// Returns `[intercept, coefficients...]`.
pub fn quantile_regression(columns: &[Vec<f64>], y: &[f64], tau: f64) -> Result<Vec<f64>> {
    Design::new(columns, y)?.solve(tau)
}

/// Centered, scaled design with collinear columns removed.
struct Design {
    n: usize,
    /// Kept columns, intercept first; each of length n.
    cols: Vec<Vec<f64>>,
    /// Original column index of each kept non-intercept column.
    kept: Vec<usize>,
    n_original: usize,
    means: Vec<f64>,
    scales: Vec<f64>,
    y: Vec<f64>,
    y_scale: f64,
}

impl Design {
    fn new(columns: &[Vec<f64>], y: &[f64]) -> Result<Self> {
        let n = y.len();
        if n == 0 {
            return Err(Error::InsufficientData { required: 1, actual: 0 });
        }
        if columns.iter().any(|c| c.len() != n) {
            return Err(Error::InvalidInput("design columns differ in length from y".into()));
        }
        if y.iter().chain(columns.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite value in quantile regression data".into()));
        }
        let nf = n as f64;
        let y_scale = (y.iter().map(|v| v * v).sum::<f64>() / nf).sqrt().max(1e-300);
        let mut cols = vec![vec![1.0; n]];
        let mut kept = Vec::new();
        let mut means = Vec::new();
        let mut scales = Vec::new();
        // Gram-Schmidt basis of the kept columns, used only for the rank test
        let mut basis: Vec<Vec<f64>> = vec![vec![1.0 / nf.sqrt(); n]];
        for (j, c) in columns.iter().enumerate() {
            let mean = c.iter().sum::<f64>() / nf;
            let sd = (c.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / nf).sqrt();
            let scale_ref = (c.iter().map(|v| v * v).sum::<f64>() / nf).sqrt();
            if sd <= COLLINEAR_TOL * scale_ref.max(1e-300) {
                continue;
            }
            let z: Vec<f64> = c.iter().map(|v| (v - mean) / sd).collect();
            let mut r = z.clone();
            for q in &basis {
                let d: f64 = q.iter().zip(&r).map(|(a, b)| a * b).sum();
                r.iter_mut().zip(q).for_each(|(r, q)| *r -= d * q);
            }
            let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm <= COLLINEAR_TOL * nf.sqrt() {
                continue;
            }
            basis.push(r.into_iter().map(|v| v / norm).collect());
            cols.push(z);
            kept.push(j);
            means.push(mean);
            scales.push(sd);
        }
        Ok(Self {
            n,
            cols,
            kept,
            n_original: columns.len(),
            means,
            scales,
            y: y.iter().map(|v| v / y_scale).collect(),
            y_scale,
        })
    }

    fn loss(&self, beta: &[f64], tau: f64) -> f64 {
        (0..self.n).map(|i| pinball(self.y[i] - self.fitted(beta, i), tau)).sum()
    }

    fn fitted(&self, beta: &[f64], i: usize) -> f64 {
        beta.iter().zip(&self.cols).map(|(b, c)| b * c[i]).sum()
    }

    fn solve(&self, tau: f64) -> Result<Vec<f64>> {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(Error::InvalidInput(format!("tau must lie in (0, 1), got {tau}")));
        }
        let interior = frisch_newton(&self.cols, &self.y, tau)?;
        let beta = self.purify(interior, tau);
        // back to the original scale
        let mut out = vec![0.0; self.n_original + 1];
        let mut intercept = beta[0] * self.y_scale;
        for (k, &j) in self.kept.iter().enumerate() {
            let b = beta[k + 1] * self.y_scale / self.scales[k];
            out[j + 1] = b;
            intercept -= b * self.means[k];
        }
        out[0] = intercept;
        Ok(out)
    }

    /// Moves to the vertex through the `p` best-fitting observations when
    /// that does not increase the loss.
    fn purify(&self, beta: Vec<f64>, tau: f64) -> Vec<f64> {
        let p = self.cols.len();
        if self.n < p {
            return beta;
        }
        let mut order: Vec<usize> = (0..self.n).collect();
        let resid: Vec<f64> = (0..self.n).map(|i| (self.y[i] - self.fitted(&beta, i)).abs()).collect();
        order.sort_by(|&a, &b| resid[a].total_cmp(&resid[b]).then(a.cmp(&b)));
        let h = &order[..p];
        let a = DMatrix::from_fn(p, p, |r, c| self.cols[c][h[r]]);
        let rhs = DVector::from_iterator(p, h.iter().map(|&i| self.y[i]));
        let Some(sol) = a.lu().solve(&rhs) else {
            return beta;
        };
        let cand: Vec<f64> = sol.iter().copied().collect();
        if cand.iter().any(|v| !v.is_finite()) {
            return beta;
        }
        let before = self.loss(&beta, tau);
        let after = self.loss(&cand, tau);
        if after <= before + 1e-12 * before.abs().max(1.0) {
            cand
        } else {
            beta
        }
    }
}

fn bound(v: &[f64], dv: &[f64]) -> f64 {
    v.iter()
        .zip(dv)
        .filter(|(_, d)| **d < 0.0)
        .map(|(v, d)| -v / d)
        .fold(f64::INFINITY, f64::min)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves `(A Q A') u = A g` where `A` has the design columns as rows.
fn normal_solve(cols: &[Vec<f64>], q: &[f64], g: &[f64]) -> Result<Vec<f64>> {
    let p = cols.len();
    let mut m = DMatrix::<f64>::zeros(p, p);
    for j in 0..p {
        for k in 0..=j {
            let v: f64 = (0..q.len()).map(|i| q[i] * cols[j][i] * cols[k][i]).sum();
            m[(j, k)] = v;
            m[(k, j)] = v;
        }
    }
    let rhs = DVector::from_iterator(p, cols.iter().map(|c| dot(c, g)));
    if let Some(ch) = m.clone().cholesky() {
        return Ok(ch.solve(&rhs).iter().copied().collect());
    }
    m.lu()
        .solve(&rhs)
        .map(|v| v.iter().copied().collect())
        .ok_or_else(|| Error::Numeric("singular normal matrix in quantile regression".into()))
}

/// Interior point solution of `min c'x  s.t.  A x = b, 0 <= x <= 1` with
/// `c = -y`, `A = X'`, `b = (1 - tau) X'1`; returns the coefficients `-dual`.
fn frisch_newton(cols: &[Vec<f64>], y: &[f64], tau: f64) -> Result<Vec<f64>> {
    let n = y.len();
    let nf = n as f64;
    let c: Vec<f64> = y.iter().map(|v| -v).collect();
    let b: Vec<f64> = cols.iter().map(|col| (1.0 - tau) * col.iter().sum::<f64>()).collect();

    let mut x = vec![1.0 - tau; n];
    let mut s = vec![tau; n];
    let ones = vec![1.0; n];
    let mut dual = normal_solve(cols, &ones, &c)?;
    let at = |d: &[f64], i: usize| -> f64 { cols.iter().zip(d).map(|(col, v)| col[i] * v).sum() };
    let mut z = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n {
        let mut r = c[i] - at(&dual, i);
        if r == 0.0 {
            r = 0.001;
        }
        z[i] = r.max(0.0);
        w[i] = z[i] - r;
    }

    let mut q = vec![0.0; n];
    let mut r = vec![0.0; n];
    let mut dx = vec![0.0; n];
    let mut ds = vec![0.0; n];
    let mut dz = vec![0.0; n];
    let mut dw = vec![0.0; n];
    let mut converged = false;
    for _ in 0..MAX_ITER {
        let gap = dot(&c, &x) - dot(&b, &dual) + w.iter().sum::<f64>();
        if gap < GAP_TOL * (1.0 + dot(&c, &x).abs()) {
            converged = true;
            break;
        }
        for i in 0..n {
            q[i] = 1.0 / (z[i] / x[i] + w[i] / s[i]);
            r[i] = z[i] - w[i];
        }
        // affine scaling step
        let mut dy = normal_solve(cols, &q, &r.iter().zip(&q).map(|(r, q)| r * q).collect::<Vec<_>>())?;
        for i in 0..n {
            dx[i] = q[i] * (at(&dy, i) - r[i]);
            ds[i] = -dx[i];
            dz[i] = -z[i] * (dx[i] / x[i] + 1.0);
            dw[i] = -w[i] * (ds[i] / s[i] + 1.0);
        }
        let mut fp = (STEP_FRACTION * bound(&x, &dx).min(bound(&s, &ds))).min(1.0);
        let mut fd = (STEP_FRACTION * bound(&w, &dw).min(bound(&z, &dz))).min(1.0);

        if fp.min(fd) < 1.0 {
            // centering-corrector step
            let mu0 = dot(&z, &x) + dot(&w, &s);
            let g: f64 = (0..n)
                .map(|i| {
                    (z[i] + fd * dz[i]) * (x[i] + fp * dx[i]) + (w[i] + fd * dw[i]) * (s[i] + fp * ds[i])
                })
                .sum();
            let mu = mu0 * (g / mu0).powi(3) / (2.0 * nf);
            let mut v = vec![0.0; n];
            let mut dxdz = vec![0.0; n];
            let mut dsdw = vec![0.0; n];
            for i in 0..n {
                dxdz[i] = dx[i] * dz[i];
                dsdw[i] = ds[i] * dw[i];
                let xi = mu * (1.0 / x[i] - 1.0 / s[i]);
                v[i] = r[i] - xi + dxdz[i] / x[i] - dsdw[i] / s[i];
            }
            dy = normal_solve(cols, &q, &v.iter().zip(&q).map(|(v, q)| v * q).collect::<Vec<_>>())?;
            for i in 0..n {
                dx[i] = q[i] * (at(&dy, i) - v[i]);
                ds[i] = -dx[i];
                dz[i] = mu / x[i] - z[i] - z[i] / x[i] * dx[i] - dxdz[i] / x[i];
                dw[i] = mu / s[i] - w[i] - w[i] / s[i] * ds[i] - dsdw[i] / s[i];
            }
            fp = (STEP_FRACTION * bound(&x, &dx).min(bound(&s, &ds))).min(1.0);
            fd = (STEP_FRACTION * bound(&w, &dw).min(bound(&z, &dz))).min(1.0);
        }

        for i in 0..n {
            x[i] += fp * dx[i];
            s[i] += fp * ds[i];
            z[i] += fd * dz[i];
            w[i] += fd * dw[i];
        }
        dual.iter_mut().zip(&dy).for_each(|(d, step)| *d += fd * step);
        if dual.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("interior point iterate diverged".into()));
        }
    }
    if !converged {
        let gap = dot(&c, &x) - dot(&b, &dual) + w.iter().sum::<f64>();
        let rel = gap / (1.0 + dot(&c, &x).abs());
        if rel < LOOSE_GAP_TOL {
            debug!("quantile regression at tau={tau} stopped at relative gap {rel:.1e}");
        } else {
            warn!("quantile regression at tau={tau} stopped at relative gap {rel:.1e}");
        }
    }
    Ok(dual.iter().map(|v| -v).collect())
}
