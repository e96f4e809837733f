//! Gradient-boosted quantile regression trees on the boosting feature set.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::{quantile_levels, QuantileCdf};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::forecasters::gbr::{fit_gbr_prepared, BoostedTreesModel, GbrParams, Loss, TreeData};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbqrtModel {
    pub levels: Vec<f64>,
    pub models: Vec<BoostedTreesModel>,
}

/// One pinball-loss boosted model per quantile level, all sharing the
/// presorted training features.
pub fn fit_gbqrt(x: &FeatureMatrix, max_depth: usize) -> Result<GbqrtModel> {
    if !x.has_target() {
        return Err(Error::InvalidInput("quantile boosting needs a target".into()));
    }
    let data = TreeData::new(x)?;
    let levels = quantile_levels();
    let models = levels
        .par_iter()
        .map(|&tau| {
            fit_gbr_prepared(&data, &x.target, &GbrParams::new(max_depth, Loss::Pinball { tau }))
                .map(|(m, _)| m)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GbqrtModel { levels, models })
}

impl GbqrtModel {
    pub fn predict_row(&self, row: &[f64]) -> Result<QuantileCdf> {
        let raw = self.models.iter().map(|m| m.predict_row(row)).collect();
        QuantileCdf::new(self.levels.clone(), raw)
    }

    pub fn predict(&self, x: &FeatureMatrix) -> Result<Vec<QuantileCdf>> {
        let Some(first) = self.models.first() else {
            return Err(Error::InvalidInput("empty quantile model".into()));
        };
        x.check_columns(&first.column_names)?;
        (0..x.n_rows()).map(|i| self.predict_row(x.row(i))).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn matrix(target: Vec<f64>, flat: bool, seed: u64) -> FeatureMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..target.len())
            .map(|_| {
                if flat {
                    vec![1.0, 2.0]
                } else {
                    vec![rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)]
                }
            })
            .collect();
        FeatureMatrix::from_rows(vec!["a".into(), "b".into()], &rows, target).unwrap()
    }

    #[test]
    fn constant_target() {
        let x = matrix(vec![7.5; 200], false, 1);
        let m = fit_gbqrt(&x, 3).unwrap();
        let q = m.predict_row(&[0.3, 0.4]).unwrap();
        assert!(q.values().iter().all(|v| (v - 7.5).abs() < 1e-9));
    }

    #[test]
    fn uniform_noise_flat_features() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let y: Vec<f64> = (0..5000).map(|_| rng.random_range(0.0..1.0)).collect();
        let x = matrix(y, true, 2);
        let m = fit_gbqrt(&x, 2).unwrap();
        let q = m.predict_row(&[1.0, 2.0]).unwrap();
        for (tau, v) in q.levels().iter().zip(q.values()) {
            assert!((v - tau).abs() < 0.05, "tau {tau}: {v}");
        }
        assert!(m.predict(&matrix(vec![0.0; 3], true, 0)).unwrap().len() == 3);
    }
}
