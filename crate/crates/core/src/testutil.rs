//! Shared fixtures and independent oracles for unit tests.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::features::FeatureMatrix;

/// Well-conditioned random regression problem with a linear signal.
pub fn random_design(n: usize, p: usize, seed: u64) -> FeatureMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let beta: Vec<f64> = (0..p).map(|_| rng.random_range(-2.0..2.0)).collect();
    let mut rows = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let r: Vec<f64> = (0..p).map(|_| rng.random_range(-1.0..1.0)).collect();
        let signal: f64 = r.iter().zip(&beta).map(|(a, b)| a * b).sum();
        y.push(3.0 + signal + rng.random_range(-0.5..0.5));
        rows.push(r);
    }
    let names = (0..p).map(|j| format!("x{j}")).collect();
    FeatureMatrix::from_rows(names, &rows, y).unwrap()
}

/// Ordinary least squares with intercept via the normal equations.
pub fn ols_oracle(x: &FeatureMatrix) -> (f64, Vec<f64>) {
    let n = x.n_rows();
    let p = x.n_cols();
    let a = DMatrix::from_fn(n, p + 1, |i, j| if j == 0 { 1.0 } else { x.row(i)[j - 1] });
    let y = DVector::from_column_slice(&x.target);
    let ata = a.transpose() * &a;
    let aty = a.transpose() * y;
    let sol = ata.cholesky().expect("normal equations SPD").solve(&aty);
    (sol[0], sol.iter().skip(1).copied().collect())
}
