//! Distributional regression with a zero-censored Student-t response.
//!
//! Location is linear in the members, log-scale is an intercept plus a
//! monotone increasing penalized spline of the ensemble standard deviation,
//! and the degrees of freedom are a single constant.

use log::{debug, warn};
use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::backtest::EnsembleForecast;
use crate::bspline::{
    add_second_difference_gradient, second_difference_penalty, CubicBasis, Monotonicity,
};
use crate::combiners::{fit_ea, qra::min_window, CombinerWindow, EaModel};
use crate::distributions::{t_ln_cdf, PredictiveDistribution, ZeroMassT};
use crate::error::{Error, Result};
use crate::optim::{minimize, LbfgsOptions, Status};
use crate::special::{digamma, ln_beta, t_ln_pdf};

const EIGEN_REL_TOL: f64 = 1e-10;
const LN_NU_MIN: f64 = -3.0;
const LN_NU_MAX: f64 = 16.0;
const NU_STEP: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GamlssOptions {
    /// Equidistant knots spanning the training range of the ensemble sd.
    pub n_knots: usize,
    pub penalty: f64,
    pub max_iter: usize,
    /// Stop when one iteration improves the log-likelihood by less than this.
    pub tol: f64,
}

impl Default for GamlssOptions {
    fn default() -> Self {
        Self {
            n_knots: 20,
            penalty: 1.0,
            max_iter: 500,
            tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GamlssCombiner {
    /// `[beta_0, beta_1, ..., beta_M]`
    pub beta: Vec<f64>,
    pub sigma_intercept: f64,
    /// `None` when the training ensemble sd had no spread.
    pub sigma_basis: Option<CubicBasis>,
    pub sigma_coefficients: Vec<f64>,
    pub nu: f64,
    pub iterations: usize,
    pub log_likelihood: f64,
}

impl GamlssCombiner {
    pub fn n_members(&self) -> usize {
        self.beta.len() - 1
    }

    pub fn log_sigma(&self, s: f64) -> f64 {
        self.sigma_intercept
            + self
                .sigma_basis
                .as_ref()
                .map_or(0.0, |b| b.value(&self.sigma_coefficients, s))
    }

    pub fn mean(&self, members: &[f64]) -> Result<f64> {
        if members.len() != self.n_members() {
            return Err(Error::InvalidInput(format!(
                "model has {} members, forecast has {}",
                self.n_members(),
                members.len()
            )));
        }
        Ok(self.beta[0] + self.beta[1..].iter().zip(members).map(|(b, x)| b * x).sum::<f64>())
    }

    pub fn predict(&self, ens: &EnsembleForecast) -> Result<ZeroMassT> {
        ZeroMassT::new(self.mean(&ens.members)?, self.log_sigma(ens.ensemble_sd).exp(), self.nu)
    }
}

/// Result of a daily fit; the EA model stands in when the optimizer fails.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status")]
pub enum GamlssFit {
    Fitted(GamlssCombiner),
    Fallback { model: EaModel, reason: String },
}

impl GamlssFit {
    pub fn is_fallback(&self) -> bool {
        matches!(self, GamlssFit::Fallback { .. })
    }

    pub fn predict(&self, ens: &EnsembleForecast) -> Result<PredictiveDistribution> {
        match self {
            GamlssFit::Fitted(m) => m.predict(ens).map(Into::into),
            GamlssFit::Fallback { model, .. } => model.predict(ens).map(Into::into),
        }
    }

    pub fn fitted(&self) -> Option<&GamlssCombiner> {
        match self {
            GamlssFit::Fitted(m) => Some(m),
            GamlssFit::Fallback { .. } => None,
        }
    }
}

pub fn fit_gamlss(window: &CombinerWindow, opts: &GamlssOptions) -> Result<GamlssFit> {
    let m = window.n_members();
    let need = min_window(m);
    if window.len() < need {
        return Err(Error::InsufficientData {
            required: need,
            actual: window.len(),
        });
    }
    if opts.n_knots < 2 {
        return Err(Error::Config(format!("GAMLSS needs at least 2 knots, got {}", opts.n_knots)));
    }
    match Problem::new(window, opts)?.solve(opts) {
        Ok(model) => Ok(GamlssFit::Fitted(model)),
        Err(reason) => {
            warn!("GAMLSS fit fell back to EA: {reason}");
            Ok(GamlssFit::Fallback {
                model: fit_ea(window)?,
                reason,
            })
        }
    }
}

/// Working problem on loads divided by their mean, with whitened members.
struct Problem {
    n: usize,
    scale: f64,
    y: Vec<f64>,
    /// Whitened centered members, row-major `n x k`.
    z: Vec<f64>,
    k: usize,
    /// Maps whitened coefficients back to member coefficients (`M x k`).
    whiten: DMatrix<f64>,
    member_means: Vec<f64>,
    basis: Option<CubicBasis>,
    /// First basis index and values per observation.
    rows: Vec<(usize, [f64; 4])>,
    n_basis: usize,
    penalty: f64,
}

impl Problem {
    fn new(window: &CombinerWindow, opts: &GamlssOptions) -> Result<Self> {
        let n = window.len();
        let m = window.n_members();
        let scale = window.mean_load();
        if !(scale > 0.0) {
            return Err(Error::Numeric("GAMLSS window has zero mean load".into()));
        }
        let y: Vec<f64> = window.observed.iter().map(|v| v / scale).collect();
        let mut member_means = vec![0.0; m];
        for f in &window.forecasts {
            for (a, x) in member_means.iter_mut().zip(&f.members) {
                *a += x / scale;
            }
        }
        member_means.iter_mut().for_each(|v| *v /= n as f64);
        let centered = DMatrix::from_fn(n, m, |i, j| window.forecasts[i].members[j] / scale - member_means[j]);
        let cov = centered.transpose() * &centered / n as f64;
        let eig = SymmetricEigen::new(cov);
        let lmax = eig.eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b));
        let keep: Vec<usize> = (0..m)
            .filter(|&j| lmax > 0.0 && eig.eigenvalues[j] > EIGEN_REL_TOL * lmax)
            .collect();
        let k = keep.len();
        let whiten = DMatrix::from_fn(m, k, |r, c| {
            eig.eigenvectors[(r, keep[c])] / eig.eigenvalues[keep[c]].sqrt()
        });
        let zm = &centered * &whiten;
        let z: Vec<f64> = (0..n).flat_map(|i| (0..k).map(move |j| (i, j))).map(|(i, j)| zm[(i, j)]).collect();

        let (lo, hi) = window
            .forecasts
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), f| {
                (a.min(f.ensemble_sd), b.max(f.ensemble_sd))
            });
        let n_basis = opts.n_knots + 2;
        let basis = if hi - lo > 1e-12 * hi.abs().max(1.0) {
            Some(CubicBasis::new(lo, hi, n_basis)?)
        } else {
            debug!("ensemble sd is constant over the window; fitting a constant scale");
            None
        };
        let rows = match &basis {
            Some(b) => window.forecasts.iter().map(|f| b.eval(f.ensemble_sd)).collect(),
            None => Vec::new(),
        };
        Ok(Self {
            n,
            scale,
            y,
            z,
            k,
            whiten,
            member_means,
            n_basis: if basis.is_some() { n_basis } else { 0 },
            basis,
            rows,
            penalty: opts.penalty,
        })
    }

    fn n_spline_params(&self) -> usize {
        if self.basis.is_some() {
            Monotonicity::Increasing.n_params(self.n_basis)
        } else {
            0
        }
    }

    /// Parameter layout: `[alpha, b_1..b_k, gamma_0, u_1..u_q, ln nu]`.
    fn initial(&self) -> std::result::Result<Vec<f64>, String> {
        let nf = self.n as f64;
        let alpha = self.y.iter().sum::<f64>() / nf;
        let mut b = vec![0.0; self.k];
        for i in 0..self.n {
            for j in 0..self.k {
                b[j] += self.z[i * self.k + j] * self.y[i] / nf;
            }
        }
        let ss: f64 = (0..self.n)
            .map(|i| {
                let mu = alpha + (0..self.k).map(|j| b[j] * self.z[i * self.k + j]).sum::<f64>();
                (self.y[i] - mu).powi(2)
            })
            .sum();
        let sd = (ss / nf).sqrt();
        if !(sd > 1e-9) {
            return Err(format!("degenerate window: residual sd {sd:e} after least squares"));
        }
        let mut x = vec![alpha];
        x.extend(b);
        x.push(sd.ln());
        x.extend(std::iter::repeat_n(-10.0, self.n_spline_params()));
        x.push(10.0f64.ln());
        Ok(x)
    }

    /// Penalized negative log-likelihood and its gradient.
    fn objective(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let k = self.k;
        let q = self.n_spline_params();
        let ln_nu = x[k + 2 + q];
        if !(LN_NU_MIN..=LN_NU_MAX).contains(&ln_nu) {
            return f64::INFINITY;
        }
        let nu = ln_nu.exp();
        let alpha = x[0];
        let b = &x[1..=k];
        let gamma0 = x[k + 1];
        let u = &x[k + 2..k + 2 + q];
        let coefs = if q > 0 {
            Monotonicity::Increasing.coefficients(u)
        } else {
            Vec::new()
        };

        let ln_norm = -ln_beta(0.5 * nu, 0.5) - 0.5 * nu.ln();
        let d_ln_norm = 0.5 * (digamma(0.5 * (nu + 1.0)) - digamma(0.5 * nu)) - 0.5 / nu;

        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut coef_grad = vec![0.0; self.n_basis];
        let mut ll = 0.0;
        let mut d_nu = 0.0;
        for i in 0..self.n {
            let zi = &self.z[i * k..(i + 1) * k];
            let mu = alpha + b.iter().zip(zi).map(|(a, c)| a * c).sum::<f64>();
            let mut eta = gamma0;
            if q > 0 {
                let (j, v) = self.rows[i];
                eta += (0..4).map(|r| coefs[j + r] * v[r]).sum::<f64>();
            }
            let sigma = eta.exp();
            let (l, g_mu, g_eta, g_nu) = if self.y[i] > 0.0 {
                let z = (self.y[i] - mu) / sigma;
                let z2 = z * z;
                let l = ln_norm - eta - 0.5 * (nu + 1.0) * (z2 / nu).ln_1p();
                let w = (nu + 1.0) / (nu + z2);
                (
                    l,
                    w * z / sigma,
                    -1.0 + w * z2,
                    d_ln_norm - 0.5 * (z2 / nu).ln_1p() + 0.5 * w * z2 / nu,
                )
            } else {
                let z0 = -mu / sigma;
                let lf = t_ln_cdf(z0, nu);
                let r = (t_ln_pdf(z0, nu) - lf).exp();
                let h = NU_STEP;
                let d_ln_nu = (t_ln_cdf(z0, nu * h.exp()) - t_ln_cdf(z0, nu * (-h).exp())) / (2.0 * h);
                (lf, -r / sigma, -z0 * r, d_ln_nu / nu)
            };
            ll += l;
            grad[0] -= g_mu;
            for (g, c) in grad[1..=k].iter_mut().zip(zi) {
                *g -= g_mu * c;
            }
            grad[k + 1] -= g_eta;
            if q > 0 {
                let (j, v) = self.rows[i];
                for r in 0..4 {
                    coef_grad[j + r] -= g_eta * v[r];
                }
            }
            d_nu += g_nu;
        }
        let mut f = -ll;
        if q > 0 {
            f += self.penalty * second_difference_penalty(&coefs);
            add_second_difference_gradient(&coefs, self.penalty, &mut coef_grad);
            Monotonicity::Increasing.param_gradient(u, &coef_grad, &mut grad[k + 2..k + 2 + q]);
        }
        grad[k + 2 + q] = -d_nu * nu;
        f
    }

    fn solve(&self, opts: &GamlssOptions) -> std::result::Result<GamlssCombiner, String> {
        let x0 = self.initial()?;
        let lopts = LbfgsOptions {
            max_iter: opts.max_iter,
            f_abs_tol: opts.tol,
            memory: x0.len(),
            ..LbfgsOptions::default()
        };
        let res = minimize(|x, g| self.objective(x, g), &x0, &lopts);
        if !res.f.is_finite() {
            return Err("non-finite likelihood".into());
        }
        match res.status {
            Status::Converged => {}
            Status::MaxIterations => {
                return Err(format!("no convergence after {} iterations", res.iterations));
            }
            Status::LineSearchFailed => {
                let mut g = vec![0.0; x0.len()];
                self.objective(&res.x, &mut g);
                let gmax = g.iter().fold(0.0f64, |a, v| a.max(v.abs()));
                if gmax > 1e-2 {
                    return Err(format!("line search failed with gradient {gmax:e}"));
                }
            }
        }
        Ok(self.to_model(&res.x, res.iterations, -res.f))
    }

    fn to_model(&self, x: &[f64], iterations: usize, penalized_ll: f64) -> GamlssCombiner {
        let k = self.k;
        let q = self.n_spline_params();
        let c = self.scale;
        let bw = nalgebra::DVector::from_column_slice(&x[1..=k]);
        let member_beta = &self.whiten * bw;
        let shift: f64 = member_beta.iter().zip(&self.member_means).map(|(b, m)| b * m).sum();
        let mut beta = vec![c * (x[0] - shift)];
        beta.extend(member_beta.iter().copied());
        let coefs = if q > 0 {
            Monotonicity::Increasing.coefficients(&x[k + 2..k + 2 + q])
        } else {
            Vec::new()
        };
        let coefs_for_ll = coefs.clone();
        GamlssCombiner {
            beta,
            sigma_intercept: x[k + 1] + c.ln(),
            sigma_basis: self.basis.clone(),
            sigma_coefficients: coefs,
            nu: x[k + 2 + q].exp(),
            iterations,
            // unpenalized, back on the original load scale
            log_likelihood: penalized_ll + self.penalty * second_difference_penalty(&coefs_for_ll)
                - (self.y.iter().filter(|v| **v > 0.0).count() as f64) * c.ln(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::combiners::testdata::{hour, window};
    use crate::distributions::censored_t_loglik;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StudentT};

    fn recovery_window(n: usize, seed: u64) -> CombinerWindow {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = StudentT::new(6.0).unwrap();
        let mut members = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let m1: f64 = rng.random_range(100.0..200.0);
            let mut row = vec![m1];
            row.extend((0..8).map(|_| rng.random_range(100.0..200.0)));
            y.push((m1 + 5.0 * t.sample(&mut rng)).max(0.0));
            members.push(row);
        }
        window(&members, &y)
    }

    #[test]
    fn recovers_location_and_tail() {
        let w = recovery_window(5000, 11);
        let fit = fit_gamlss(&w, &GamlssOptions::default()).unwrap();
        let model = fit.fitted().expect("fit should converge");
        assert!((model.beta[1] - 1.0).abs() <= 0.1, "beta1 {}", model.beta[1]);
        assert!(model.beta[2..].iter().all(|b| b.abs() < 0.1));
        assert!((3.0..=12.0).contains(&model.nu), "nu {}", model.nu);
        let basis = model.sigma_basis.as_ref().unwrap();
        let grid: Vec<f64> = (0..1000)
            .map(|i| basis.lower + (basis.upper - basis.lower) * i as f64 / 999.0)
            .collect();
        let ls: Vec<f64> = grid.iter().map(|&s| model.log_sigma(s)).collect();
        assert!(ls.windows(2).all(|p| p[1] >= p[0] - 1e-9));
        // scale near 5 in the bulk
        let sigma = model.log_sigma(grid[500]).exp();
        assert!((3.5..7.0).contains(&sigma), "sigma {sigma}");
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 400;
        let members: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..3).map(|_| rng.random_range(0.0..20.0)).collect())
            .collect();
        let y: Vec<f64> = members
            .iter()
            .map(|m| (m[0] - 3.0 + rng.random_range(-6.0..6.0f64)).max(0.0))
            .collect();
        assert!(y.iter().any(|v| *v == 0.0));
        let w = window(&members, &y);
        let p = Problem::new(&w, &GamlssOptions::default()).unwrap();
        let mut x = p.initial().unwrap();
        for (i, v) in x.iter_mut().enumerate() {
            *v += 0.05 * ((i * 7 % 5) as f64 - 2.0);
        }
        let mut g = vec![0.0; x.len()];
        p.objective(&x, &mut g);
        let mut scratch = g.clone();
        for i in 0..x.len() {
            let h = 1e-6;
            let mut a = x.clone();
            a[i] += h;
            let mut b = x.clone();
            b[i] -= h;
            let fd = (p.objective(&a, &mut scratch) - p.objective(&b, &mut scratch)) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-4 * (1.0 + fd.abs()), "param {i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn likelihood_on_original_scale() {
        let w = recovery_window(600, 5);
        let fit = fit_gamlss(&w, &GamlssOptions { penalty: 0.0, ..Default::default() }).unwrap();
        let model = fit.fitted().unwrap();
        let mut mu = Vec::new();
        let mut sigma = Vec::new();
        for f in &w.forecasts {
            let d = model.predict(f).unwrap();
            mu.push(d.mu);
            sigma.push(d.sigma);
        }
        let direct = censored_t_loglik(&w.observed, &mu, &sigma, model.nu).unwrap();
        assert!((direct - model.log_likelihood).abs() < 1e-6 * direct.abs());
    }

    #[test]
    fn perfect_fit_falls_back() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let members: Vec<Vec<f64>> = (0..400)
            .map(|_| (0..9).map(|_| rng.random_range(10.0..20.0)).collect())
            .collect();
        let y: Vec<f64> = members.iter().map(|m| m.iter().sum::<f64>() / 9.0).collect();
        let fit = fit_gamlss(&window(&members, &y), &GamlssOptions::default()).unwrap();
        assert!(fit.is_fallback());
        let p = fit.predict(&window(&members, &y).forecasts[0]).unwrap();
        assert!(matches!(p, PredictiveDistribution::ZeroMassGaussian(_)));
    }

    #[test]
    fn predict_examples() {
        let basis = CubicBasis::new(0.0, 10.0, 22).unwrap();
        let mut model = GamlssCombiner {
            beta: vec![0.0, 1.0, 0.0],
            sigma_intercept: 0.0,
            sigma_basis: Some(basis),
            sigma_coefficients: vec![0.0; 22],
            nu: 5.0,
            iterations: 0,
            log_likelihood: 0.0,
        };
        let ens = EnsembleForecast::from_members(hour(0), vec![42.0, 7.0]).unwrap();
        let d = model.predict(&ens).unwrap();
        assert_eq!((d.mu, d.sigma, d.nu), (42.0, 1.0, 5.0));
        model.sigma_coefficients = Monotonicity::Increasing.coefficients(&[0.1; 21]);
        let lo = model.predict(&EnsembleForecast::from_members(hour(0), vec![1.0, 2.0]).unwrap()).unwrap();
        let hi = model.predict(&EnsembleForecast::from_members(hour(0), vec![1.0, 9.0]).unwrap()).unwrap();
        assert!(hi.sigma >= lo.sigma);
        // clamped above the training range
        let far = model.predict(&EnsembleForecast::from_members(hour(0), vec![1.0, 500.0]).unwrap()).unwrap();
        assert!((far.sigma - model.log_sigma(10.0).exp()).abs() < 1e-12);
        assert!(model.predict(&EnsembleForecast::from_members(hour(0), vec![1.0; 3]).unwrap()).is_err());
    }

    #[test]
    fn window_floor() {
        let w = window(&vec![vec![1.0; 9]; 100], &[1.0; 100]);
        assert!(matches!(
            fit_gamlss(&w, &GamlssOptions::default()),
            Err(Error::InsufficientData { .. })
        ));
    }
}
