//! Additive model with penalized cubic B-spline terms, shape constraints on
//! the load and temperature terms, and day-of-week dummies.

use serde::{Deserialize, Serialize};

use crate::bspline::{
    add_second_difference_gradient, second_difference_penalty, CubicBasis, Monotonicity,
};
use crate::error::{Error, Result};
use crate::features::{FeatureMatrix, FeatureSet};
use crate::optim::{minimize, LbfgsOptions, Status};

/// Spline term layout: column name, basis size, shape.
const SPLINE_TERMS: [(&str, usize, Monotonicity); 7] = [
    ("load_lag24", 10, Monotonicity::Increasing),
    ("load_lag168", 10, Monotonicity::Increasing),
    ("load_peak_prev", 10, Monotonicity::Increasing),
    ("temp", 10, Monotonicity::Decreasing),
    ("temp_avg_prev", 10, Monotonicity::Decreasing),
    ("hod", 24, Monotonicity::None),
    ("woy", 5, Monotonicity::None),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineBlock {
    pub column: String,
    pub column_index: usize,
    /// `None` when the training feature had a single unique value; the block
    /// then contributes 0.
    pub basis: Option<CubicBasis>,
    pub monotonicity: Monotonicity,
    pub coefficients: Vec<f64>,
}

impl SplineBlock {
    pub fn value(&self, x: f64) -> f64 {
        match &self.basis {
            Some(b) => b.value(&self.coefficients, x),
            None => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GamModel {
    pub column_names: Vec<String>,
    pub intercept: f64,
    pub blocks: Vec<SplineBlock>,
    pub dow_columns: Vec<usize>,
    pub dow_coefficients: Vec<f64>,
    pub lambda: f64,
    pub include_woy: bool,
    /// Columns whose blocks were zeroed because the feature was constant.
    pub degenerate: Vec<String>,
    pub converged: bool,
}

impl GamModel {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.intercept
            + self
                .blocks
                .iter()
                .map(|b| b.value(row[b.column_index]))
                .sum::<f64>()
            + self
                .dow_columns
                .iter()
                .zip(&self.dow_coefficients)
                .map(|(&j, c)| row[j] * c)
                .sum::<f64>()
    }

    pub fn predict(&self, x: &FeatureMatrix) -> Result<Vec<f64>> {
        x.check_columns(&self.column_names)?;
        Ok((0..x.n_rows()).map(|i| self.predict_row(x.row(i))).collect())
    }

    pub fn block(&self, column: &str) -> Option<&SplineBlock> {
        self.blocks.iter().find(|b| b.column == column)
    }
}

pub fn predict_gam(model: &GamModel, x: &FeatureMatrix) -> Result<Vec<f64>> {
    model.predict(x)
}

struct BlockDesign {
    monotonicity: Monotonicity,
    n_basis: usize,
    param_offset: usize,
    /// per row: first nonzero basis index and values
    rows: Vec<(u32, [f64; 4])>,
}

pub fn fit_gam(x: &FeatureMatrix, lambda: f64, include_woy: bool) -> Result<GamModel> {
    x.check_columns(&FeatureSet::Gam { include_woy }.column_names())?;
    if !x.has_target() {
        return Err(Error::InvalidInput("GAM fit needs a target".into()));
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidInput(format!("lambda must be >= 0, got {lambda}")));
    }
    x.check_finite()?;
    let n = x.n_rows();
    let terms: Vec<_> = SPLINE_TERMS
        .iter()
        .filter(|(name, _, _)| include_woy || *name != "woy")
        .collect();
    let total_basis: usize = terms.iter().map(|t| t.1).sum::<usize>() + 7;
    if n < total_basis {
        return Err(Error::InsufficientData {
            required: total_basis,
            actual: n,
        });
    }

    let col_index = |name: &str| x.column_names.iter().position(|c| c == name).unwrap();
    let dow_columns: Vec<usize> = x
        .column_names
        .iter()
        .enumerate()
        .filter(|(_, c)| c.starts_with("dow_"))
        .map(|(j, _)| j)
        .collect();

    // Work on a standardized response; coefficients are rescaled at the end.
    let y_mean = x.target.iter().sum::<f64>() / n as f64;
    let y_sd = (x.target.iter().map(|y| (y - y_mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    let y_scale = if y_sd > 1e-12 { y_sd } else { 1.0 };
    let y: Vec<f64> = x.target.iter().map(|v| (v - y_mean) / y_scale).collect();

    let mut blocks = Vec::new();
    let mut designs = Vec::new();
    let mut degenerate = Vec::new();
    let mut n_params = 1;
    for &&(name, n_basis, monotonicity) in &terms {
        let j = col_index(name);
        let col = x.column(j);
        let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let basis = if hi > lo {
            Some(CubicBasis::new(lo, hi, n_basis)?)
        } else {
            degenerate.push(name.to_string());
            None
        };
        if let Some(b) = &basis {
            let rows = col
                .iter()
                .map(|&v| {
                    let (k, vals) = b.eval(v);
                    (k as u32, vals)
                })
                .collect();
            designs.push(Some(BlockDesign {
                monotonicity,
                n_basis,
                param_offset: n_params,
                rows,
            }));
            n_params += monotonicity.n_params(n_basis);
        } else {
            designs.push(None);
        }
        blocks.push(SplineBlock {
            column: name.to_string(),
            column_index: j,
            basis,
            monotonicity,
            coefficients: vec![0.0; n_basis],
        });
    }
    let dow_offset = n_params;
    n_params += dow_columns.len();
    let dow_values: Vec<Vec<f64>> = dow_columns.iter().map(|&j| x.column(j)).collect();

    let mut theta0 = vec![0.0; n_params];
    for d in designs.iter().flatten() {
        if d.monotonicity != Monotonicity::None {
            let p = d.monotonicity.n_params(d.n_basis);
            theta0[d.param_offset..d.param_offset + p].fill((0.05f64).ln());
        }
    }

    let nf = n as f64;
    let mut fitted = vec![0.0; n];
    let mut coefs: Vec<Vec<f64>> = designs
        .iter()
        .map(|d| d.as_ref().map(|d| vec![0.0; d.n_basis]).unwrap_or_default())
        .collect();
    let mut coef_grad: Vec<Vec<f64>> = coefs.clone();

    let objective = |theta: &[f64], grad: &mut [f64]| -> f64 {
        fitted.fill(theta[0]);
        for (d, c) in designs.iter().zip(coefs.iter_mut()) {
            let Some(d) = d else { continue };
            let p = d.monotonicity.n_params(d.n_basis);
            *c = d
                .monotonicity
                .coefficients(&theta[d.param_offset..d.param_offset + p]);
            for (f, (k, b)) in fitted.iter_mut().zip(&d.rows) {
                let k = *k as usize;
                *f += b[0] * c[k] + b[1] * c[k + 1] + b[2] * c[k + 2] + b[3] * c[k + 3];
            }
        }
        for (m, vals) in dow_values.iter().enumerate() {
            let beta = theta[dow_offset + m];
            for (f, v) in fitted.iter_mut().zip(vals) {
                *f += beta * v;
            }
        }
        // fitted now holds residual scale factors after this loop
        let mut loss = 0.0;
        for (f, yi) in fitted.iter_mut().zip(&y) {
            let r = yi - *f;
            loss += r * r;
            *f = -2.0 * r / nf;
        }
        loss /= nf;
        grad.fill(0.0);
        grad[0] = fitted.iter().sum();
        for ((d, c), cg) in designs.iter().zip(&coefs).zip(coef_grad.iter_mut()) {
            let Some(d) = d else { continue };
            cg.fill(0.0);
            for (w, (k, b)) in fitted.iter().zip(&d.rows) {
                let k = *k as usize;
                cg[k] += w * b[0];
                cg[k + 1] += w * b[1];
                cg[k + 2] += w * b[2];
                cg[k + 3] += w * b[3];
            }
            loss += lambda * second_difference_penalty(c);
            add_second_difference_gradient(c, lambda, cg);
            let p = d.monotonicity.n_params(d.n_basis);
            let off = d.param_offset;
            d.monotonicity
                .param_gradient(&theta[off..off + p], cg, &mut grad[off..off + p]);
        }
        for (m, vals) in dow_values.iter().enumerate() {
            grad[dow_offset + m] = fitted.iter().zip(vals).map(|(w, v)| w * v).sum();
        }
        loss
    };

    let opts = LbfgsOptions {
        max_iter: 1000,
        memory: 12,
        f_abs_tol: 0.0,
        f_rel_tol: 1e-11,
        g_tol: 1e-7,
    };
    let result = minimize(objective, &theta0, &opts);
    if !result.f.is_finite() {
        return Err(Error::Numeric("GAM objective diverged".into()));
    }
    let theta = result.x;

    for (block, d) in blocks.iter_mut().zip(&designs) {
        if let Some(d) = d {
            let p = d.monotonicity.n_params(d.n_basis);
            block.coefficients = d
                .monotonicity
                .coefficients(&theta[d.param_offset..d.param_offset + p])
                .into_iter()
                .map(|c| c * y_scale)
                .collect();
        }
    }
    Ok(GamModel {
        column_names: x.column_names.clone(),
        intercept: y_mean + theta[0] * y_scale,
        blocks,
        dow_columns,
        dow_coefficients: theta[dow_offset..].iter().map(|b| b * y_scale).collect(),
        lambda,
        include_woy,
        degenerate,
        converged: result.status != Status::MaxIterations,
    })
}
