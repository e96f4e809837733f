//! Point forecasters: Lasso, gradient-boosted trees and the additive model.

pub mod gam;
pub mod gbr;
pub mod lasso;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureMatrix, FeatureSet};

pub use gam::{fit_gam, predict_gam, GamModel};
pub use gbr::{fit_gbr, predict_gbr, BoostedTreesModel, GbrParams, Loss};
pub use lasso::{fit_lasso, predict_lasso, LassoModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    Lasso,
    Gbr,
    Gam,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Lasso, Method::Gbr, Method::Gam];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Lasso => "Lasso",
            Method::Gbr => "GBR",
            Method::Gam => "GAM",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lasso" => Ok(Method::Lasso),
            "gbr" => Ok(Method::Gbr),
            "gam" => Ok(Method::Gam),
            _ => Err(Error::Config(format!("unknown forecasting method `{s}`"))),
        }
    }
}

/// The single tuned hyperparameter of a method.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Hyperparameter {
    Lambda(f64),
    Depth(usize),
}

impl fmt::Display for Hyperparameter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Hyperparameter::Lambda(l) => write!(f, "lambda={l}"),
            Hyperparameter::Depth(d) => write!(f, "depth={d}"),
        }
    }
}

impl Hyperparameter {
    /// Orders candidates from most to least regularized.
    pub fn regularization_rank(&self) -> f64 {
        match *self {
            Hyperparameter::Lambda(l) => -l,
            Hyperparameter::Depth(d) => d as f64,
        }
    }
}

/// Method plus training-window length; one ensemble member.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ForecasterId {
    pub method: Method,
    pub window_days: usize,
}

impl ForecasterId {
    pub fn new(method: Method, window_days: usize) -> Self {
        Self {
            method,
            window_days,
        }
    }

    /// The week-of-year term is only used by the long-window additive model.
    pub fn feature_set(&self) -> FeatureSet {
        match self.method {
            Method::Lasso => FeatureSet::Lasso,
            Method::Gbr => FeatureSet::Gbr,
            Method::Gam => FeatureSet::Gam {
                include_woy: self.window_days >= 365,
            },
        }
    }

    pub fn label(&self) -> String {
        format!("{}-{}", self.method, self.window_days)
    }
}

impl fmt::Display for ForecasterId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum FittedModel {
    Lasso(LassoModel),
    Gbr(BoostedTreesModel),
    Gam(GamModel),
}

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelDocument {
    format_version: u32,
    model: FittedModel,
}

impl FittedModel {
    pub fn fit(id: &ForecasterId, x: &FeatureMatrix, hyper: Hyperparameter) -> Result<Self> {
        match (id.method, hyper) {
            (Method::Lasso, Hyperparameter::Lambda(l)) => fit_lasso(x, l).map(FittedModel::Lasso),
            (Method::Gbr, Hyperparameter::Depth(d)) => {
                fit_gbr(x, d, Loss::LeastSquares).map(FittedModel::Gbr)
            }
            (Method::Gam, Hyperparameter::Lambda(l)) => {
                let include_woy = matches!(id.feature_set(), FeatureSet::Gam { include_woy: true });
                fit_gam(x, l, include_woy).map(FittedModel::Gam)
            }
            (m, h) => Err(Error::Config(format!("{h} is not a hyperparameter of {m}"))),
        }
    }

    pub fn predict(&self, x: &FeatureMatrix) -> Result<Vec<f64>> {
        match self {
            FittedModel::Lasso(m) => m.predict(x),
            FittedModel::Gbr(m) => m.predict(x),
            FittedModel::Gam(m) => m.predict(x),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&ModelDocument {
            format_version: MODEL_FORMAT_VERSION,
            model: self.clone(),
        })?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: ModelDocument = serde_json::from_str(s)?;
        if doc.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::InvalidInput(format!(
                "unsupported model format version {}",
                doc.format_version
            )));
        }
        Ok(doc.model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::random_design;

    #[test]
    fn json_roundtrip_preserves_predictions() {
        let x = random_design(60, 3, 11);
        let lasso = FittedModel::Lasso(fit_lasso(&x, 0.01).unwrap());
        let gbr = FittedModel::Gbr(fit_gbr(&x, 3, Loss::LeastSquares).unwrap());
        for m in [lasso, gbr] {
            let back = FittedModel::from_json(&m.to_json().unwrap()).unwrap();
            assert_eq!(back.predict(&x).unwrap(), m.predict(&x).unwrap());
        }
    }

    #[test]
    fn rejects_wrong_version() {
        let doc = r#"{"format_version":99,"model":{"kind":"Lasso","column_names":[],"intercept":0,"coefficients":[],"lambda":0,"means":[],"scales":[],"sweeps":0}}"#;
        assert!(FittedModel::from_json(doc).is_err());
    }

    #[test]
    fn feature_sets_per_member() {
        assert_eq!(
            ForecasterId::new(Method::Gam, 365).feature_set(),
            FeatureSet::Gam { include_woy: true }
        );
        assert_eq!(
            ForecasterId::new(Method::Gam, 90).feature_set(),
            FeatureSet::Gam { include_woy: false }
        );
        assert_eq!(ForecasterId::new(Method::Gbr, 60).label(), "GBR-60");
    }

    #[test]
    fn mismatched_hyperparameter() {
        let x = random_design(20, 2, 1);
        let id = ForecasterId::new(Method::Lasso, 60);
        assert!(FittedModel::fit(&id, &x, Hyperparameter::Depth(3)).is_err());
    }
}
