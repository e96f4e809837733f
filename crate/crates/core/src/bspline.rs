//! Cubic B-splines on equidistant knots and the second-order difference
//! penalty, plus the cumulative-exponential monotone parameterization shared
//! by the additive model and the scale spline of the distributional model.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cubic B-spline basis on `[lower, upper]` with equidistant knots.
///
/// Knots extend three spacings beyond each end so that the basis forms a
/// partition of unity everywhere on the range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CubicBasis {
    pub lower: f64,
    pub upper: f64,
    pub n_basis: usize,
}

impl CubicBasis {
    pub fn new(lower: f64, upper: f64, n_basis: usize) -> Result<Self> {
        if n_basis < 4 {
            return Err(Error::InvalidInput(format!(
                "cubic basis needs at least 4 functions, got {n_basis}"
            )));
        }
        if !(lower.is_finite() && upper.is_finite() && upper > lower) {
            return Err(Error::InvalidInput(format!(
                "degenerate spline range [{lower}, {upper}]"
            )));
        }
        Ok(Self {
            lower,
            upper,
            n_basis,
        })
    }

    pub fn n_intervals(&self) -> usize {
        self.n_basis - 3
    }

    pub fn spacing(&self) -> f64 {
        (self.upper - self.lower) / self.n_intervals() as f64
    }

    /// Full knot vector (length `n_basis + 4`).
    pub fn knots(&self) -> Vec<f64> {
        let h = self.spacing();
        (0..self.n_basis + 4)
            .map(|k| self.lower + (k as f64 - 3.0) * h)
            .collect()
    }

    /// Index of the first nonzero basis function at `x` and the four nonzero
    /// values. `x` is clamped to the range first.
    pub fn eval(&self, x: f64) -> (usize, [f64; 4]) {
        let x = x.clamp(self.lower, self.upper);
        let u = (x - self.lower) / self.spacing();
        let last = self.n_intervals() - 1;
        let j = (u.floor() as usize).min(last);
        let t = u - j as f64;
        let s = 1.0 - t;
        let t2 = t * t;
        let t3 = t2 * t;
        (
            j,
            [
                s * s * s / 6.0,
                (3.0 * t3 - 6.0 * t2 + 4.0) / 6.0,
                (-3.0 * t3 + 3.0 * t2 + 3.0 * t + 1.0) / 6.0,
                t3 / 6.0,
            ],
        )
    }

    /// Dense basis row.
    pub fn row(&self, x: f64) -> Vec<f64> {
        let (j, b) = self.eval(x);
        let mut out = vec![0.0; self.n_basis];
        out[j..j + 4].copy_from_slice(&b);
        out
    }

    pub fn value(&self, coefs: &[f64], x: f64) -> f64 {
        let (j, b) = self.eval(x);
        b.iter().zip(&coefs[j..j + 4]).map(|(b, c)| b * c).sum()
    }
}

/// `sum_k (c_k - 2 c_{k+1} + c_{k+2})^2`
pub fn second_difference_penalty(c: &[f64]) -> f64 {
    c.windows(3)
        .map(|w| {
            let d = w[0] - 2.0 * w[1] + w[2];
            d * d
        })
        .sum()
}

/// Adds `weight * d/dc second_difference_penalty(c)` to `grad`.
pub fn add_second_difference_gradient(c: &[f64], weight: f64, grad: &mut [f64]) {
    for k in 0..c.len().saturating_sub(2) {
        let d = 2.0 * weight * (c[k] - 2.0 * c[k + 1] + c[k + 2]);
        grad[k] += d;
        grad[k + 1] -= 2.0 * d;
        grad[k + 2] += d;
    }
}

/// Shape restriction of a spline block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Monotonicity {
    Increasing,
    Decreasing,
    None,
}

impl Monotonicity {
    /// Number of free parameters for `n_basis` coefficients. The first
    /// coefficient is pinned at zero; the level lives in the intercept.
    pub fn n_params(&self, n_basis: usize) -> usize {
        n_basis - 1
    }

    /// Maps free parameters to coefficients. Monotone blocks use cumulative
    /// sums of `exp(u)`, so successive coefficients never move against the tag.
    pub fn coefficients(&self, params: &[f64]) -> Vec<f64> {
        let mut c = Vec::with_capacity(params.len() + 1);
        c.push(0.0);
        let mut acc = 0.0;
        for &u in params {
            acc += match self {
                Monotonicity::Increasing => u.exp(),
                Monotonicity::Decreasing => -u.exp(),
                Monotonicity::None => {
                    c.push(u);
                    continue;
                }
            };
            c.push(acc);
        }
        c
    }

    /// Chain rule from coefficient gradient to parameter gradient.
    pub fn param_gradient(&self, params: &[f64], coef_grad: &[f64], out: &mut [f64]) {
        match self {
            Monotonicity::None => out.copy_from_slice(&coef_grad[1..]),
            Monotonicity::Increasing | Monotonicity::Decreasing => {
                let sign = if *self == Monotonicity::Increasing { 1.0 } else { -1.0 };
                // d c_k / d u_j = sign * exp(u_j) for every k >= j + 1
                let mut tail = 0.0;
                for j in (0..params.len()).rev() {
                    tail += coef_grad[j + 1];
                    out[j] = sign * params[j].exp() * tail;
                }
            }
        }
    }
}
