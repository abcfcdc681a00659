//! Nuisance regressors behind a single fit/predict interface.

mod forest;
mod lasso;
mod ols;

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stochastics::SeededStream;

pub use forest::{Forest, ForestParams, Tree, TreeNode};
pub use lasso::{
    coordinate_descent, cv_select_lambda, lambda_grid, CdSolution, CdSolver, CvSelection, LassoParams, Standardizer,
};
pub use ols::fit_ols;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LearnerKind {
    #[serde(rename = "LAS")]
    Las,
    #[serde(rename = "LIN")]
    Lin,
    #[serde(rename = "RF")]
    Rf,
}

impl LearnerKind {
    pub fn label(self) -> &'static str {
        match self {
            LearnerKind::Las => "LAS",
            LearnerKind::Lin => "LIN",
            LearnerKind::Rf => "RF",
        }
    }
}

impl fmt::Display for LearnerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for LearnerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lin" | "ols" => Ok(LearnerKind::Lin),
            "las" | "lasso" => Ok(LearnerKind::Las),
            "rf" | "forest" => Ok(LearnerKind::Rf),
            other => Err(Error::InvalidArgument(format!(
                "unknown learner `{other}` (expected lin, las or rf)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerSpec {
    pub kind: LearnerKind,
    pub lasso: LassoParams,
    pub rf: ForestParams,
}

impl LearnerSpec {
    pub fn new(kind: LearnerKind) -> Self {
        Self {
            kind,
            lasso: LassoParams::default(),
            rf: ForestParams::default(),
        }
    }

    pub fn lin() -> Self {
        Self::new(LearnerKind::Lin)
    }

    pub fn las() -> Self {
        Self::new(LearnerKind::Las)
    }

    pub fn rf() -> Self {
        Self::new(LearnerKind::Rf)
    }

    fn min_rows(&self) -> usize {
        match self.kind {
            LearnerKind::Las => self.lasso.cv_folds.max(2),
            _ => 2,
        }
    }
}

/// Affine predictor `x·coef + intercept`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub coef: Vec<f64>,
    pub intercept: f64,
}

impl LinearModel {
    pub fn intercept_only(value: f64, p: usize) -> Self {
        Self {
            coef: vec![0.0; p],
            intercept: value,
        }
    }

    fn predict_row(&self, row: ArrayView1<'_, f64>) -> f64 {
        self.intercept
            + self
                .coef
                .iter()
                .zip(row.iter())
                .filter(|(c, _)| **c != 0.0)
                .map(|(c, x)| c * x)
                .sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase")]
pub enum Model {
    Linear(LinearModel),
    Forest(Forest),
}

/// Immutable fitted nuisance regressor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedRegressor {
    pub kind: LearnerKind,
    pub p: usize,
    pub model: Model,
}

impl FittedRegressor {
    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        predict(self, x)
    }

    /// JSON dump for debugging.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }
}

pub fn fit(
    spec: &LearnerSpec,
    x: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
    stream: &mut SeededStream,
) -> Result<FittedRegressor> {
    let (n, p) = x.dim();
    if y.len() != n {
        return Err(Error::Fit(format!("x has {n} rows but y has {}", y.len())));
    }
    if n < spec.min_rows() {
        return Err(Error::Fit(format!(
            "{} needs at least {} rows, got {n}",
            spec.kind,
            spec.min_rows()
        )));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Fit("non-finite training data".into()));
    }
    let model = match spec.kind {
        LearnerKind::Lin => Model::Linear(fit_ols(x, y)?),
        LearnerKind::Las => Model::Linear(lasso::fit_lasso(&spec.lasso, x, y, stream)?),
        LearnerKind::Rf => Model::Forest(Forest::fit(&spec.rf, x, y, stream)?),
    };
    Ok(FittedRegressor {
        kind: spec.kind,
        p,
        model,
    })
}

pub fn predict(model: &FittedRegressor, x: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
    if x.ncols() != model.p {
        return Err(Error::DimensionMismatch {
            expected: model.p,
            got: x.ncols(),
        });
    }
    let out = match &model.model {
        Model::Linear(lm) => x.rows().into_iter().map(|r| lm.predict_row(r)).collect(),
        Model::Forest(f) => x.rows().into_iter().map(|r| f.predict_row(r)).collect(),
    };
    Ok(out)
}
