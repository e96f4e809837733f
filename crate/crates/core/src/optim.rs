//! Limited-memory BFGS with a strong-Wolfe line search.

use std::collections::VecDeque;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsOptions {
    pub max_iter: usize,
    pub memory: usize,
    /// Stop when one iteration improves the objective by less than this.
    pub f_abs_tol: f64,
    /// Stop when the relative improvement drops below this.
    pub f_rel_tol: f64,
    /// Stop when the largest gradient component is below this.
    pub g_tol: f64,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            memory: 10,
            f_abs_tol: 0.0,
            f_rel_tol: 1e-12,
            g_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Converged,
    MaxIterations,
    /// No step along the search direction decreased the objective.
    LineSearchFailed,
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub status: Status,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Minimizes `f`, which writes the gradient into its second argument and
/// returns the objective. Non-finite objective values are treated as +inf.
pub fn minimize<F>(mut f: F, x0: &[f64], opts: &LbfgsOptions) -> Minimum
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut g = vec![0.0; n];
    let mut fx = sanitize(f(&x, &mut g));
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut d = vec![0.0; n];
    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];

    if !fx.is_finite() {
        return Minimum {
            x,
            f: fx,
            iterations: 0,
            status: Status::LineSearchFailed,
        };
    }

    for iter in 0..opts.max_iter {
        if max_abs(&g) <= opts.g_tol {
            return Minimum {
                x,
                f: fx,
                iterations: iter,
                status: Status::Converged,
            };
        }

        // two-loop recursion
        d.iter_mut().zip(&g).for_each(|(d, g)| *d = -g);
        let mut alphas = Vec::with_capacity(history.len());
        for (s, y, rho) in history.iter().rev() {
            let a = rho * dot(s, &d);
            d.iter_mut().zip(y).for_each(|(d, y)| *d -= a * y);
            alphas.push(a);
        }
        if let Some((s, y, _)) = history.back() {
            let gamma = dot(s, y) / dot(y, y);
            d.iter_mut().for_each(|d| *d *= gamma);
        }
        for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &d);
            d.iter_mut().zip(s).for_each(|(d, s)| *d += (a - b) * s);
        }

        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            history.clear();
            d.iter_mut().zip(&g).for_each(|(d, g)| *d = -g);
            slope = dot(&g, &d);
        }
        let initial = if history.is_empty() {
            (1.0 / max_abs(&g)).min(1.0)
        } else {
            1.0
        };

        let found = line_search(
            &mut f, &x, fx, slope, &d, initial, &mut x_new, &mut g_new,
        );
        let Some(f_new) = found else {
            if !history.is_empty() {
                history.clear();
                continue;
            }
            return Minimum {
                x,
                f: fx,
                iterations: iter,
                status: Status::LineSearchFailed,
            };
        };

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() {
            if history.len() == opts.memory {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }

        let improvement = fx - f_new;
        x.copy_from_slice(&x_new);
        g.copy_from_slice(&g_new);
        fx = f_new;
        if improvement <= opts.f_abs_tol
            || improvement <= opts.f_rel_tol * fx.abs().max(1e-300)
        {
            return Minimum {
                x,
                f: fx,
                iterations: iter + 1,
                status: Status::Converged,
            };
        }
    }
    Minimum {
        x,
        f: fx,
        iterations: opts.max_iter,
        status: Status::MaxIterations,
    }
}

fn sanitize(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        f64::INFINITY
    }
}

const C1: f64 = 1e-4;
const C2: f64 = 0.9;

#[allow(clippy::too_many_arguments)]
fn line_search<F>(
    f: &mut F,
    x: &[f64],
    f0: f64,
    slope0: f64,
    d: &[f64],
    initial: f64,
    x_out: &mut [f64],
    g_out: &mut [f64],
) -> Option<f64>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let mut eval = |a: f64, x_out: &mut [f64], g_out: &mut [f64]| -> (f64, f64) {
        for i in 0..x.len() {
            x_out[i] = x[i] + a * d[i];
        }
        let v = sanitize(f(x_out, g_out));
        (v, if v.is_finite() { dot(g_out, d) } else { f64::NAN })
    };
    let sufficient = |a: f64, fa: f64| fa <= f0 + C1 * a * slope0;
    let curvature = |da: f64| da.abs() <= -C2 * slope0;

    // (step, value, directional derivative)
    let mut prev = (0.0, f0, slope0);
    let mut a = initial;
    let (mut lo, mut hi);
    let mut i = 0;
    loop {
        let (fa, da) = eval(a, x_out, g_out);
        if !sufficient(a, fa) || (i > 0 && fa >= prev.1) {
            lo = prev;
            hi = (a, fa, da);
            break;
        }
        if curvature(da) {
            return Some(fa);
        }
        if da >= 0.0 {
            lo = (a, fa, da);
            hi = prev;
            break;
        }
        prev = (a, fa, da);
        a *= 2.0;
        i += 1;
        if i >= 40 {
            let (fa, _) = eval(prev.0, x_out, g_out);
            return Some(fa);
        }
    }

    for _ in 0..60 {
        let w = hi.0 - lo.0;
        if w.abs() <= 1e-14 * lo.0.abs().max(hi.0.abs()) {
            break;
        }
        let denom = 2.0 * (hi.1 - lo.1 - lo.2 * w);
        let trial = if hi.1.is_finite() && denom > 0.0 {
            lo.0 - lo.2 * w * w / denom
        } else {
            lo.0 + 0.5 * w
        };
        let (a_min, a_max) = if w > 0.0 {
            (lo.0 + 0.1 * w, lo.0 + 0.9 * w)
        } else {
            (lo.0 + 0.9 * w, lo.0 + 0.1 * w)
        };
        let a = trial.clamp(a_min, a_max);
        let (fa, da) = eval(a, x_out, g_out);
        if !sufficient(a, fa) || fa >= lo.1 {
            hi = (a, fa, da);
        } else {
            if curvature(da) {
                return Some(fa);
            }
            if da * w >= 0.0 {
                hi = lo;
            }
            lo = (a, fa, da);
        }
    }
    // fall back to the best point satisfying sufficient decrease
    if lo.0 > 0.0 && lo.1 < f0 {
        let (fa, _) = eval(lo.0, x_out, g_out);
        return Some(fa);
    }
    None
}
